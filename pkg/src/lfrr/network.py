"""Raindrop-removal network: MDFB, re-sampling module and refinement module.

Parameters live in a flat ordered ``dict`` from dotted path names (for
example ``"rsm.mdfb.3.branch.epi_h.weight"``) to :class:`Tensor`.  Block
functions take that dict plus a name prefix so the same code serves both
the full model and isolated block tests.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch
from .lightfield import LightField
from .resample import clamp_positions, init_positions, interpolate_4d

BRANCH_PLANES = ("spatial", "angular", "epi_h", "epi_v")

RESAMPLE_MASKS = {
    "full_4d": (1.0, 1.0, 1.0, 1.0),
    "spatial_only": (0.0, 0.0, 1.0, 1.0),
    "angular_only": (1.0, 1.0, 0.0, 0.0),
    "none": (0.0, 0.0, 0.0, 0.0),
}
REFINE_MODES = ("dgeb", "mdfb", "none")


@dataclass(frozen=True)
class ModelConfig:
    M: int = 5
    N: int = 5
    c: int = 64
    r: int = 16
    slope: float = 0.1
    # leaky_relu between the two offset-head convolutions
    offset_activation: bool = True
    # sigmoid on DGEB attention maps; off reproduces the block exactly as designed
    attention_squash: bool = False

    def __post_init__(self):
        if self.c % 4:
            raise ValueError(f"channel count c={self.c} must be divisible by 4")
        if min(self.M, self.N) < 0 or self.c < 4 or self.r < 1:
            raise ValueError(f"invalid model config {self}")

    @property
    def seb_hidden(self) -> int:
        return max(1, 2 * self.c // self.r)


@dataclass(frozen=True)
class Ablation:
    resample: str = "full_4d"
    refine: str = "dgeb"

    def __post_init__(self):
        if self.resample not in RESAMPLE_MASKS:
            raise ValueError(f"unknown resample mode {self.resample!r}")
        if self.refine not in REFINE_MODES:
            raise ValueError(f"unknown refine mode {self.refine!r}")
        if self.resample == "none" and self.refine == "none":
            raise ValueError("resample=none with refine=none leaves nothing to learn")


# -- parameters -----------------------------------------------------------------

def _conv_shapes(prefix: str, k: int, cin: int, cout: int):
    return [(f"{prefix}.weight", (k, k, cin, cout)), (f"{prefix}.bias", (cout,))]


def _mdfb_shapes(prefix: str, c: int):
    shapes = []
    for plane in BRANCH_PLANES:
        shapes += _conv_shapes(f"{prefix}.branch.{plane}", 3, c, c // 4)
    shapes += _conv_shapes(f"{prefix}.fuse", 1, c, c)
    return shapes


def parameter_shapes(cfg: ModelConfig, ablation: Ablation = Ablation()) -> list[tuple[str, tuple]]:
    c = cfg.c
    shapes = _conv_shapes("rsm.lift", 3, 3, c)
    for m in range(cfg.M):
        shapes += _mdfb_shapes(f"rsm.mdfb.{m}", c)
    shapes += _conv_shapes("rsm.offset.0", 3, c, c)
    shapes += _conv_shapes("rsm.offset.1", 3, c, 4)
    if ablation.refine == "none":
        return shapes
    shapes += _conv_shapes("rm.init", 3, 3, c)
    for k in range(cfg.N):
        shapes += _mdfb_shapes(f"rm.block.{k}.mdfb", c)
        if ablation.refine == "dgeb":
            shapes += _conv_shapes(f"rm.block.{k}.att_i", 1, c, 1)
            shapes += _conv_shapes(f"rm.block.{k}.att_o", 1, c, 1)
    h = cfg.seb_hidden
    shapes += [("rm.seb.fc1.weight", (2 * c, h)), ("rm.seb.fc1.bias", (h,))]
    shapes += [("rm.seb.fc2.weight", (h, 2 * c)), ("rm.seb.fc2.bias", (2 * c,))]
    shapes += _conv_shapes("rm.head.0", 3, 2 * c, c)
    shapes += _conv_shapes("rm.head.1", 3, c, 3)
    return shapes


# Final layers of both heads start at zero so the untrained model is the identity.
ZERO_INIT = ("rsm.offset.1.", "rm.head.1.")


def init_params(cfg: ModelConfig, ablation: Ablation = Ablation(), seed: int = 0) -> dict[str, Tensor]:
    """Fan-in scaled uniform weights, zero biases, zero-initialised head outputs."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg, ablation):
        if name.endswith(".bias") or name.startswith(ZERO_INIT):
            value = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(value, requires_grad=True)
    return params


def parameter_count(params) -> int:
    return int(sum(p.size for p in params.values()))


def closed_form_parameter_count(cfg: ModelConfig, ablation: Ablation = Ablation()) -> int:
    c, h = cfg.c, cfg.seb_hidden
    conv = lambda k, cin, cout: k * k * cin * cout + cout  # noqa: E731
    mdfb = 4 * conv(3, c, c // 4) + conv(1, c, c)
    total = conv(3, 3, c) + cfg.M * mdfb + conv(3, c, c) + conv(3, c, 4)
    if ablation.refine == "none":
        return total
    block = mdfb + (2 * conv(1, c, 1) if ablation.refine == "dgeb" else 0)
    total += conv(3, 3, c) + cfg.N * block
    total += (2 * c * h + h) + (h * 2 * c + 2 * c)
    total += conv(3, 2 * c, c) + conv(3, c, 3)
    return total


# -- blocks ------------------------------------------------------------------------

def _conv(params, name, x, plane="spatial"):
    return ad.axis_conv(x, params[f"{name}.weight"], params[f"{name}.bias"], plane)


def mdfb_forward(F: Tensor, params, prefix: str, slope: float = 0.1) -> Tensor:
    """Four parallel plane convolutions, concatenated, fused by 1x1, plus the input."""
    c = F.shape[-1]
    if params[f"{prefix}.fuse.weight"].shape[2] != c:
        raise ShapeMismatch(f"{prefix}: feature has {c} channels, block expects "
                            f"{params[f'{prefix}.fuse.weight'].shape[2]}")
    branches = [
        ad.leaky_relu(_conv(params, f"{prefix}.branch.{plane}", F, plane), slope)
        for plane in BRANCH_PLANES
    ]
    fused = _conv(params, f"{prefix}.fuse", ad.concat_channels(*branches))
    return F + fused


def dgeb_forward(F_I: Tensor, F_O: Tensor, params, prefix: str, cfg: ModelConfig):
    """Difference-guided encoding of the input/re-sampled feature pair."""
    if F_I.shape != F_O.shape:
        raise ShapeMismatch(f"DGEB inputs differ: {F_I.shape} vs {F_O.shape}")
    E_I = mdfb_forward(F_I, params, f"{prefix}.mdfb", cfg.slope)
    E_O = mdfb_forward(F_O, params, f"{prefix}.mdfb", cfg.slope)
    diff = E_I - E_O
    A_I = _conv(params, f"{prefix}.att_i", diff)
    A_O = _conv(params, f"{prefix}.att_o", diff)
    if cfg.attention_squash:
        A_I, A_O = ad.sigmoid(A_I), ad.sigmoid(A_O)
    return E_I * A_I + E_I, E_O * A_O + E_O


def seb_forward(F: Tensor, params, prefix: str, slope: float = 0.1) -> Tensor:
    """Per-view channel rescaling from spatially pooled statistics."""
    if params[f"{prefix}.fc1.weight"].shape[0] != F.shape[-1]:
        raise ShapeMismatch(f"{prefix}: feature has {F.shape[-1]} channels")
    pooled = ad.global_avg_pool_spatial(F)
    hidden = ad.leaky_relu(ad.affine(pooled, params[f"{prefix}.fc1.weight"], params[f"{prefix}.fc1.bias"]), slope)
    s = ad.sigmoid(ad.affine(hidden, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"]))
    return F * s


def predict_offsets(I: Tensor, params, cfg: ModelConfig) -> Tensor:
    F = _conv(params, "rsm.lift", I)
    for m in range(cfg.M):
        F = mdfb_forward(F, params, f"rsm.mdfb.{m}", cfg.slope)
    h = _conv(params, "rsm.offset.0", F)
    if cfg.offset_activation:
        h = ad.leaky_relu(h, cfg.slope)
    return _conv(params, "rsm.offset.1", h)


def rsm_forward(I: Tensor, params, cfg: ModelConfig, ablation: Ablation = Ablation(), offsets=None):
    """Re-sampling module; returns ``(O_i, P, dP)``.

    ``offsets`` replaces the predicted offset field (used by oracle tests).
    """
    if I.shape[-1] != 3:
        raise ShapeMismatch(f"input must have 3 channels, got {I.shape[-1]}")
    dims = I.shape[:4]
    P0 = init_positions(*dims, dtype=I.data.dtype)
    if offsets is not None:
        dP = ad.as_tensor(offsets)
    elif ablation.resample == "none":
        dP = Tensor(np.zeros(P0.shape))
    else:
        dP = predict_offsets(I, params, cfg)
    mask = np.asarray(RESAMPLE_MASKS[ablation.resample]).reshape(1, 1, 1, 1, 4)
    if offsets is None and ablation.resample != "full_4d":
        dP = dP * Tensor(mask)
    P = clamp_positions(dP + Tensor(P0), dims)
    return interpolate_4d(I, P), P, dP


def rm_forward(I: Tensor, O_i: Tensor, params, cfg: ModelConfig, ablation: Ablation = Ablation()) -> Tensor:
    """Refinement module; returns the signed residual ``R``."""
    if I.shape != O_i.shape:
        raise ShapeMismatch(f"I {I.shape} and O_i {O_i.shape} differ")
    if ablation.refine == "none":
        return Tensor(np.zeros(I.shape))
    F_I = _conv(params, "rm.init", I)
    F_O = _conv(params, "rm.init", O_i)
    for k in range(cfg.N):
        prefix = f"rm.block.{k}"
        if ablation.refine == "dgeb":
            F_I, F_O = dgeb_forward(F_I, F_O, params, prefix, cfg)
        else:
            F_I = mdfb_forward(F_I, params, f"{prefix}.mdfb", cfg.slope)
            F_O = mdfb_forward(F_O, params, f"{prefix}.mdfb", cfg.slope)
    fused = seb_forward(ad.concat_channels(F_I, F_O), params, "rm.seb", cfg.slope)
    h = ad.leaky_relu(_conv(params, "rm.head.0", fused), cfg.slope)
    return _conv(params, "rm.head.1", h)


def model_forward(I: Tensor, params, cfg: ModelConfig, ablation: Ablation = Ablation()):
    """``(O_i, O_f)`` with ``O_f = O_i + R`` left unclamped for the loss."""
    O_i, _, _ = rsm_forward(I, params, cfg, ablation)
    R = rm_forward(I, O_i, params, cfg, ablation)
    return O_i, O_i + R


@dataclass
class Prediction:
    initial: LightField
    final: LightField
    residual: LightField
    offsets: np.ndarray


class Model:
    """A configured network together with its parameters."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), ablation: Ablation = Ablation(), params=None, seed: int = 0):
        self.cfg = cfg
        self.ablation = ablation
        self.params = init_params(cfg, ablation, seed) if params is None else params

    def forward(self, I: Tensor):
        return model_forward(I, self.params, self.cfg, self.ablation)

    def predict(self, lf: LightField) -> Prediction:
        """Inference on a full light field; outputs clamped to [0, 1] except the residual."""
        I = Tensor(lf.data)
        O_i, P, dP = rsm_forward(I, self.params, self.cfg, self.ablation)
        R = rm_forward(I, O_i, self.params, self.cfg, self.ablation)
        return Prediction(
            initial=LightField.clamped(O_i.data),
            final=LightField.clamped(O_i.data + R.data),
            residual=LightField(R.data, signed=True, copy=False),
            offsets=dP.data,
        )

    def parameter_count(self) -> int:
        return parameter_count(self.params)

    def describe(self) -> dict:
        return {"model": asdict(self.cfg), "ablation": asdict(self.ablation)}
