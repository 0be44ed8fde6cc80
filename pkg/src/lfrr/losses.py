"""Training losses and luma-channel evaluation metrics.

SSIM uses an 11x11 Gaussian window (sigma 1.5), ``C1 = 0.01**2``,
``C2 = 0.03**2`` for data on ``[0, 1]`` and reflect padding (mirror without
repeating the edge sample).  The EPI-gradient loss compares first-order
forward differences of the luma along both axes of every horizontal
``(u, x)`` and vertical ``(v, y)`` EPI::

    L_epi = 0.5 * (mean|D_u e| + mean|D_x e| + mean|D_v e| + mean|D_y e|)

with ``e = luma(pred) - luma(gt)``.  Adding a constant to ``pred`` leaves it
unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch
from .lightfield import LUMA_WEIGHTS, LightField, luma

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 1.0
    lam: float = 0.5

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lam) < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


def _same_shape(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and ground truth {gt.shape} differ")


def _reflect(i: int, n: int) -> int:
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


@lru_cache(maxsize=64)
def gaussian_filter_matrix(n: int, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Dense ``[n, n]`` matrix of a 1D Gaussian window with reflect padding."""
    half = size // 2
    taps = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma**2))
    taps /= taps.sum()
    m = np.zeros((n, n))
    for i in range(n):
        for o, w in zip(range(-half, half + 1), taps):
            m[i, _reflect(i + o, n)] += w
    m.flags.writeable = False
    return m


def to_luma(x: Tensor) -> Tensor:
    if x.shape[-1] == 1:
        return x
    if x.shape[-1] != 3:
        raise ShapeMismatch(f"expected 3 channels, got {x.shape[-1]}")
    return ad.affine(x, Tensor(LUMA_WEIGHTS[:, None]))


def ssim_field(a: Tensor, b: Tensor) -> Tensor:
    """Per-pixel SSIM of single-channel ``[U,V,X,Y,1]`` fields, each view separately."""
    _same_shape(a, b)
    X, Y = a.shape[2:4]
    mx, my = gaussian_filter_matrix(X), gaussian_filter_matrix(Y)

    def blur(t):
        return ad.spatial_filter(t, mx, my)

    mu_a, mu_b = blur(a), blur(b)
    mu_ab = mu_a * mu_b
    mu_a2 = ad.square(mu_a)
    mu_b2 = ad.square(mu_b)
    var_a = blur(ad.square(a)) - mu_a2
    var_b = blur(ad.square(b)) - mu_b2
    cov = blur(a * b) - mu_ab
    num = (ad.scale(mu_ab, 2.0) + SSIM_C1) * (ad.scale(cov, 2.0) + SSIM_C2)
    den = (mu_a2 + mu_b2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM map of two 2D single-channel images."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatch(f"ssim_map needs equal 2D images, got {a.shape} and {b.shape}")
    field_ = ssim_field(Tensor(a[None, None, :, :, None]), Tensor(b[None, None, :, :, None]))
    return field_.data[0, 0, :, :, 0]


def _as_tensor(x) -> Tensor:
    if isinstance(x, LightField):
        return Tensor(x.data)
    return ad.as_tensor(x)


def loss_mae(pred, gt) -> Tensor:
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    _same_shape(pred, gt)
    return ad.reduce_mean(ad.absolute(pred - gt))


def loss_ssim(pred, gt) -> Tensor:
    """``1 - mean SSIM`` over all views of the luma channel."""
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    _same_shape(pred, gt)
    return 1.0 - ad.reduce_mean(ssim_field(to_luma(pred), to_luma(gt)))


def loss_epi(pred, gt) -> Tensor:
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    _same_shape(pred, gt)
    e = to_luma(pred) - to_luma(gt)
    terms = [
        ad.reduce_mean(ad.absolute(ad.forward_diff(e, axis)))
        for axis in range(4)
        if e.shape[axis] > 1
    ]
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return ad.scale(total, 0.5)


@dataclass
class LossParts:
    mae: Tensor
    ssim: Tensor
    epi: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("mae", "ssim", "epi", "total")}


def combine(mae, ssim, epi, w: LossWeights = LossWeights()):
    return mae + w.alpha * ssim + w.beta * epi


def loss_parts(pred, gt, w: LossWeights = LossWeights()) -> LossParts:
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    _same_shape(pred, gt)
    mae = loss_mae(pred, gt)
    ssim = loss_ssim(pred, gt) if w.alpha else Tensor(0.0)
    epi = loss_epi(pred, gt) if w.beta else Tensor(0.0)
    total = mae
    if w.alpha:
        total = total + ad.scale(ssim, w.alpha)
    if w.beta:
        total = total + ad.scale(epi, w.beta)
    return LossParts(mae, ssim, epi, total)


def loss_combined(pred, gt, w: LossWeights = LossWeights()) -> Tensor:
    """``L_MAE + alpha * L_SSIM + beta * L_EPI``."""
    return loss_parts(pred, gt, w).total


def loss_stage(stage: int, O_i, O_f, gt, w: LossWeights = LossWeights()) -> Tensor:
    """Stage 1 supervises both outputs (``O_i`` weighted by ``lam``); stage 2 only ``O_f``."""
    if stage == 1:
        return loss_combined(O_f, gt, w) + ad.scale(loss_combined(O_i, gt, w), w.lam)
    if stage == 2:
        return loss_combined(O_f, gt, w)
    raise ValueError(f"stage must be 1 or 2, got {stage}")


# -- metrics -----------------------------------------------------------------------

def _array(x) -> np.ndarray:
    return x.data if isinstance(x, (LightField, Tensor)) else np.asarray(x)


def psnr_from_mse(mse: float) -> float:
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def psnr_y(pred, gt, mask=None) -> float:
    """PSNR in dB of the luma over all views (peak 1.0); ``inf`` when identical.

    ``mask`` (``[U,V,X,Y]`` or with a trailing unit axis) restricts the
    average to selected pixels.
    """
    p, g = _array(pred), _array(gt)
    _same_shape(p, g)
    err = (luma(np.clip(p, 0.0, 1.0)) - luma(g))[..., 0]
    sq = err * err
    if mask is not None:
        m = np.asarray(mask).reshape(sq.shape).astype(bool)
        if not m.any():
            return math.nan
        return psnr_from_mse(float(sq[m].mean()))
    return psnr_from_mse(float(sq.mean()))


def psnr_y_per_view(pred, gt) -> np.ndarray:
    p, g = _array(pred), _array(gt)
    _same_shape(p, g)
    err = (luma(np.clip(p, 0.0, 1.0)) - luma(g))[..., 0]
    mse = (err * err).mean(axis=(2, 3))
    return np.vectorize(psnr_from_mse)(mse)


def ssim_y_per_view(pred, gt) -> np.ndarray:
    p, g = _array(pred), _array(gt)
    _same_shape(p, g)
    field_ = ssim_field(Tensor(luma(np.clip(p, 0.0, 1.0))), Tensor(luma(g)))
    return field_.data[..., 0].mean(axis=(2, 3))


@dataclass
class SceneMetrics:
    name: str
    psnr_views: list[float]
    psnr: float
    ssim: float
    psnr_masked: float = math.nan

    def record(self) -> dict:
        return {
            "name": self.name,
            "psnr_y_views": [_finite(v) for v in self.psnr_views],
            "psnr_y": _finite(self.psnr),
            "ssim_y": self.ssim,
            "psnr_y_masked": _finite(self.psnr_masked),
        }


def _finite(v: float):
    if math.isinf(v):
        return "inf"
    if math.isnan(v):
        return None
    return v


def scene_metrics(name: str, pred, gt, mask=None) -> SceneMetrics:
    views = psnr_y_per_view(pred, gt)
    return SceneMetrics(
        name=name,
        psnr_views=[float(v) for v in views.ravel()],
        psnr=psnr_y(pred, gt),
        ssim=float(ssim_y_per_view(pred, gt).mean()),
        psnr_masked=psnr_y(pred, gt, mask) if mask is not None else math.nan,
    )


@dataclass
class MetricReport:
    scenes: list[SceneMetrics] = field(default_factory=list)
    baseline: list[SceneMetrics] = field(default_factory=list)

    @staticmethod
    def _mean(values) -> float:
        values = [v for v in values if not math.isnan(v)]
        if not values:
            return math.nan
        if any(math.isinf(v) for v in values):
            return math.inf
        return float(np.mean(values))

    @property
    def mean_psnr(self) -> float:
        return self._mean([s.psnr for s in self.scenes])

    @property
    def mean_ssim(self) -> float:
        return self._mean([s.ssim for s in self.scenes])

    @property
    def mean_psnr_masked(self) -> float:
        return self._mean([s.psnr_masked for s in self.scenes])

    @property
    def baseline_psnr(self) -> float:
        return self._mean([s.psnr for s in self.baseline])

    @property
    def baseline_ssim(self) -> float:
        return self._mean([s.ssim for s in self.baseline])

    @property
    def baseline_psnr_masked(self) -> float:
        return self._mean([s.psnr_masked for s in self.baseline])

    def summary(self) -> dict:
        return {
            "mean_psnr_y": _finite(self.mean_psnr),
            "mean_ssim_y": self.mean_ssim,
            "mean_psnr_y_masked": _finite(self.mean_psnr_masked),
            "baseline_psnr_y": _finite(self.baseline_psnr),
            "baseline_ssim_y": self.baseline_ssim,
            "baseline_psnr_y_masked": _finite(self.baseline_psnr_masked),
        }

    def lines(self) -> list[dict]:
        out = [dict(kind="model", **s.record()) for s in self.scenes]
        out += [dict(kind="baseline", **s.record()) for s in self.baseline]
        out.append(dict(kind="summary", **self.summary()))
        return out
