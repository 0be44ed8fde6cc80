"""Synthetic raindrop light fields with analytically known geometry.

Backgrounds are textured fronto-parallel planes.  A plane at disparity
``d`` shows texture coordinate ``s`` at ``x = s + d * (u - u_c)`` in view
``u`` (and likewise ``t``, ``y``, ``v``), with ``(u_c, v_c)`` the central
view; textures are procedural and evaluated exactly at real coordinates.
Raindrops are tinted, internally inverted discs at larger disparity, with
an alpha profile that falls from the drop value to zero across
``[radius - blur, radius + blur]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import NotPlanar
from .lfio import read_lfd, write_lfd
from .lightfield import LightField
from .resample import clamp_positions, init_positions, interpolate_4d_array

N_WAVES = 6


@dataclass(frozen=True)
class Texture:
    """Procedural texture: ``noise`` (sum of sinusoids) or smoothed ``checker``."""

    kind: str = "noise"
    seed: int = 0
    scale: float = 16.0
    phase: tuple[float, float] = (0.0, 0.0)
    sharpness: float = 1.5

    def __call__(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        s = s + self.phase[0]
        t = t + self.phase[1]
        if self.kind == "checker":
            c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
            w = np.tanh(self.sharpness * np.sin(2 * np.pi * s / self.scale) * np.sin(2 * np.pi * t / self.scale))
            w = 0.5 + 0.5 * w
            return c0 + (c1 - c0) * w[..., None]
        if self.kind != "noise":
            raise ValueError(f"unknown texture kind {self.kind!r}")
        base = rng.uniform(0.35, 0.65, size=3)
        out = np.broadcast_to(base, s.shape + (3,)).copy()
        angles = rng.uniform(0, np.pi, N_WAVES)
        wavelengths = self.scale * rng.uniform(0.75, 2.0, N_WAVES)
        phases = rng.uniform(0, 2 * np.pi, N_WAVES)
        amps = rng.uniform(0.2, 1.0, (N_WAVES, 3))
        amps *= 0.3 / amps.sum(axis=0)
        for a, lam, ph, amp in zip(angles, wavelengths, phases, amps):
            arg = (2 * np.pi / lam) * (np.cos(a) * s + np.sin(a) * t) + ph
            out += np.sin(arg)[..., None] * amp
        return out


@dataclass(frozen=True)
class Plane:
    disparity: float
    texture: Texture
    # optional disc (s, t, radius) in texture coordinates; None covers everything
    region: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class Drop:
    center: tuple[float, float]
    radius: float
    disparity: float
    alpha: float = 1.0
    blur: float = 0.0
    tint: tuple[float, float, float] = (0.8, 0.85, 0.9)
    tint_strength: float = 0.4
    # scale of the inverted background seen through the drop
    distortion: float = 0.6


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    dims: tuple[int, int, int, int]
    background: tuple[Plane, ...]
    raindrops: tuple[Drop, ...] = ()

    def __post_init__(self):
        if not self.background:
            raise ValueError("scene needs at least one background plane")
        d_bg = max(p.disparity for p in self.background)
        for drop in self.raindrops:
            if drop.disparity <= d_bg:
                raise ValueError(f"raindrop disparity {drop.disparity} must exceed background {d_bg}")
            if drop.radius < 1:
                raise ValueError(f"raindrop radius {drop.radius} < 1")
            if not 0 < drop.alpha <= 1:
                raise ValueError(f"raindrop alpha {drop.alpha} outside (0, 1]")

    @property
    def center_view(self) -> tuple[float, float]:
        U, V = self.dims[:2]
        return (U - 1) / 2, (V - 1) / 2

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        raw = json.loads(text)
        planes = tuple(
            Plane(p["disparity"], Texture(**{**p["texture"], "phase": tuple(p["texture"]["phase"])}),
                  None if p["region"] is None else tuple(p["region"]))
            for p in raw["background"]
        )
        drops = tuple(
            Drop(**{**d, "center": tuple(d["center"]), "tint": tuple(d["tint"])}) for d in raw["raindrops"]
        )
        return cls(raw["seed"], tuple(raw["dims"]), planes, drops)


@dataclass
class SynthPair:
    clean: LightField
    degraded: LightField
    occlusion_mask: np.ndarray  # bool [U, V, X, Y]
    spec: SceneSpec
    alpha: np.ndarray = field(repr=False, default=None)  # combined drop alpha [U, V, X, Y]
    name: str = ""


def _view_grid(spec: SceneSpec):
    """Per-view pixel coordinates and angular offsets from the central view."""
    U, V, X, Y = spec.dims
    uc, vc = spec.center_view
    u, v, x, y = np.meshgrid(np.arange(U), np.arange(V), np.arange(X), np.arange(Y), indexing="ij")
    return u - uc, v - vc, x.astype(float), y.astype(float)


def synth_background(spec: SceneSpec) -> LightField:
    """Clean light field; planes composited far to near."""
    du, dv, x, y = _view_grid(spec)
    out = None
    for plane in sorted(spec.background, key=lambda p: p.disparity):
        s = x - plane.disparity * du
        t = y - plane.disparity * dv
        colour = plane.texture(s, t)
        if out is None or plane.region is None:
            out = colour
            continue
        cs, ct, r = plane.region
        inside = (s - cs) ** 2 + (t - ct) ** 2 <= r * r
        out = np.where(inside[..., None], colour, out)
    return LightField(np.clip(out, 0.0, 1.0), copy=False)


def drop_alpha(drop: Drop, spec: SceneSpec, x=None, y=None) -> np.ndarray:
    """Alpha of one drop on the pixel grid ``[U, V, X, Y]`` (or at given points)."""
    du, dv, gx, gy = _view_grid(spec)
    x = gx if x is None else x
    y = gy if y is None else y
    cx = drop.center[0] + drop.disparity * du
    cy = drop.center[1] + drop.disparity * dv
    dist = np.hypot(x - cx, y - cy)
    if drop.blur <= 0:
        return np.where(dist <= drop.radius, drop.alpha, 0.0)
    z = np.clip((drop.radius + drop.blur - dist) / (2 * drop.blur), 0.0, 1.0)
    return drop.alpha * z * z * (3 - 2 * z)


def combined_alpha(spec: SceneSpec) -> np.ndarray:
    keep = np.ones(spec.dims)
    for drop in spec.raindrops:
        keep *= 1.0 - drop_alpha(drop, spec)
    return 1.0 - keep


def _drop_colour(clean: np.ndarray, drop: Drop, spec: SceneSpec) -> np.ndarray:
    """Blurred, inverted and tinted view of the background through the drop."""
    du, dv, x, y = _view_grid(spec)
    cx = drop.center[0] + drop.disparity * du
    cy = drop.center[1] + drop.disparity * dv
    sx = np.clip(cx - drop.distortion * (x - cx), 0, spec.dims[2] - 1)
    sy = np.clip(cy - drop.distortion * (y - cy), 0, spec.dims[3] - 1)
    U, V = spec.dims[:2]
    out = np.empty(clean.shape)
    for u in range(U):
        for v in range(V):
            for c in range(clean.shape[-1]):
                blurred = ndimage.gaussian_filter(clean[u, v, :, :, c], 1.5, mode="nearest")
                out[u, v, :, :, c] = ndimage.map_coordinates(
                    blurred, [sx[u, v], sy[u, v]], order=1, mode="nearest"
                )
    tint = np.asarray(drop.tint)
    return (1 - drop.tint_strength) * out + drop.tint_strength * tint


def synth_degraded(clean: LightField, spec: SceneSpec, name: str = "") -> SynthPair:
    """Composite the raindrops over ``clean``; mask marks combined alpha above 0.5."""
    base = clean.data
    out = base.copy()
    for drop in sorted(spec.raindrops, key=lambda d: d.disparity):
        a = drop_alpha(drop, spec)[..., None]
        out = np.where(a > 0, (1 - a) * out + a * _drop_colour(base, drop, spec), out)
    alpha = combined_alpha(spec)
    return SynthPair(
        clean=clean,
        degraded=LightField(np.clip(out, 0.0, 1.0), copy=False),
        occlusion_mask=alpha > 0.5,
        spec=spec,
        alpha=alpha,
        name=name,
    )


def synth_pair(spec: SceneSpec, name: str = "") -> SynthPair:
    return synth_degraded(synth_background(spec), spec, name)


@dataclass
class OracleOffsets:
    offsets: np.ndarray  # [U, V, X, Y, 4]
    unreachable: np.ndarray  # bool [U, V, X, Y]


def _angular_steps(U: int, V: int):
    steps = [(a, b) for a in range(-(U - 1), U) for b in range(-(V - 1), V) if (a, b) != (0, 0)]
    return sorted(steps, key=lambda s: (max(abs(s[0]), abs(s[1])), abs(s[0]) + abs(s[1]), s))


def oracle_offsets(pair: SynthPair) -> OracleOffsets:
    """Smallest angular step per masked pixel whose background sample is drop-free.

    A target is accepted only if every source pixel that receives
    interpolation weight lies outside the raindrop support in the target
    view.  Masked pixels without such a target are flagged unreachable.
    """
    spec = pair.spec
    if len(spec.background) != 1:
        raise NotPlanar(f"oracle needs a single background plane, got {len(spec.background)}")
    d = spec.background[0].disparity
    U, V, X, Y = spec.dims
    alpha = pair.alpha if pair.alpha is not None else combined_alpha(spec)
    support_free = alpha == 0
    u, v, x, y = np.meshgrid(np.arange(U), np.arange(V), np.arange(X), np.arange(Y), indexing="ij")
    todo = pair.occlusion_mask.copy()
    offsets = np.zeros((U, V, X, Y, 4))
    for su, sv in _angular_steps(U, V):
        if not todo.any():
            break
        tu, tv = u + su, v + sv
        tx, ty = x + d * su, y + d * sv
        ok = todo & (tu >= 0) & (tu < U) & (tv >= 0) & (tv < V)
        ok &= (tx >= 0) & (tx <= X - 1) & (ty >= 0) & (ty <= Y - 1)
        if not ok.any():
            continue
        idx = np.nonzero(ok)
        tu_, tv_, tx_, ty_ = tu[idx], tv[idx], tx[idx], ty[idx]
        good = np.ones(tu_.shape, dtype=bool)
        for fx, fy in ((np.floor, np.floor), (np.floor, np.ceil), (np.ceil, np.floor), (np.ceil, np.ceil)):
            good &= support_free[tu_, tv_, fx(tx_).astype(int), fy(ty_).astype(int)]
        sel = tuple(i[good] for i in idx)
        offsets[sel] = (su, sv, d * su, d * sv)
        todo[sel] = False
    return OracleOffsets(offsets, todo)


def erode(mask: np.ndarray, radius: float) -> np.ndarray:
    """Per-view binary erosion of ``[U, V, X, Y]`` by a disc of ``ceil(radius)``."""
    r = int(math.ceil(radius))
    if r <= 0:
        return mask.copy()
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    disc = xx * xx + yy * yy <= r * r
    out = np.zeros_like(mask)
    for u in range(mask.shape[0]):
        for v in range(mask.shape[1]):
            out[u, v] = ndimage.binary_erosion(mask[u, v], structure=disc)
    return out


def apply_offsets(lf: LightField, offsets: np.ndarray) -> np.ndarray:
    P = clamp_positions(init_positions(*lf.shape[:4]) + offsets, lf.shape)
    return interpolate_4d_array(lf.data, P)


# -- datasets -------------------------------------------------------------------------

def random_spec(rng: np.random.Generator, dims, seed: int) -> SceneSpec:
    U, V, X, Y = dims
    kind = "checker" if rng.random() < 0.25 else "noise"
    tex = Texture(
        kind=kind,
        seed=int(rng.integers(2**31)),
        scale=float(rng.uniform(10.0, 18.0) if kind == "noise" else rng.uniform(14.0, 24.0)),
        phase=(float(rng.uniform(0, 50)), float(rng.uniform(0, 50))),
    )
    d_bg = float(rng.uniform(0.0, 1.0))
    planes = [Plane(d_bg, tex)]
    if rng.random() < 0.25:
        d_near = float(rng.uniform(d_bg, 1.0))
        tex2 = Texture("noise", int(rng.integers(2**31)), float(rng.uniform(10.0, 18.0)),
                       (float(rng.uniform(0, 50)), float(rng.uniform(0, 50))))
        region = (float(rng.uniform(0.25, 0.75) * X), float(rng.uniform(0.25, 0.75) * Y),
                  float(rng.uniform(0.15, 0.3) * min(X, Y)))
        planes.append(Plane(d_near, tex2, region))
    d_max = max(p.disparity for p in planes)
    drops = []
    for _ in range(int(rng.integers(1, 7))):
        radius = float(rng.uniform(2.0, 4.0))
        mx = min(radius + 2, (X - 1) / 2)
        my = min(radius + 2, (Y - 1) / 2)
        drops.append(Drop(
            center=(float(rng.uniform(mx, X - 1 - mx)), float(rng.uniform(my, Y - 1 - my))),
            radius=radius,
            disparity=float(max(rng.uniform(3.0, 6.0), d_max + 2.0)),
            alpha=float(rng.uniform(0.85, 1.0)),
            blur=float(rng.uniform(0.5, 1.5)),
            tint=tuple(float(c) for c in rng.uniform(0.55, 0.95, 3)),
            tint_strength=float(rng.uniform(0.3, 0.5)),
            distortion=float(rng.uniform(0.4, 0.8)),
        ))
    return SceneSpec(seed, tuple(dims), tuple(planes), tuple(drops))


def make_dataset(n_scenes: int, dims=(3, 3, 48, 48), seed: int = 0) -> list[SynthPair]:
    """``n_scenes`` pairs, each a pure function of ``(seed, index)``."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    pairs = []
    for k in range(n_scenes):
        rng = np.random.default_rng([seed, k])
        spec = random_spec(rng, tuple(dims), seed=k)
        pairs.append(synth_pair(spec, name=f"scene_{k:03d}"))
    return pairs


def train_count(n: int) -> int:
    return max(1, (3 * n) // 4)


def split(pairs: list[SynthPair]) -> tuple[list[SynthPair], list[SynthPair]]:
    """First three quarters train, the rest validate."""
    k = train_count(len(pairs))
    return pairs[:k], pairs[k:]


MANIFEST = "manifest.txt"


def write_dataset(root, pairs: list[SynthPair], seed: int | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n_train = train_count(len(pairs))
    lines = [f"# lfrr synthetic dataset: {len(pairs)} scenes, {n_train} train, "
             f"{len(pairs) - n_train} validation, seed {seed}"]
    for k, pair in enumerate(pairs):
        name = pair.name or f"scene_{k:03d}"
        d = root / name
        d.mkdir(exist_ok=True)
        write_lfd(d / "clean.lfd", pair.clean)
        write_lfd(d / "degraded.lfd", pair.degraded)
        write_lfd(d / "mask.lfd", LightField(pair.occlusion_mask[..., None].astype(np.float64), copy=False))
        role = "train" if k < n_train else "val"
        lines.append(f"{name}\t{role}\t{pair.spec.to_json()}")
    (root / MANIFEST).write_text("\n".join(lines) + "\n")
    return root


def read_dataset(root) -> list[SynthPair]:
    return [pair for pair, _ in _read_manifest(root)]


def read_split(root) -> tuple[list[SynthPair], list[SynthPair]]:
    """Training and validation pairs as recorded in the manifest."""
    entries = _read_manifest(root)
    return [p for p, r in entries if r == "train"], [p for p, r in entries if r == "val"]


def _read_manifest(root) -> list[tuple[SynthPair, str]]:
    root = Path(root)
    pairs = []
    for line in (root / MANIFEST).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        name, role, spec_json = line.split("\t", 2)
        spec = SceneSpec.from_json(spec_json)
        d = root / name
        mask = read_lfd(d / "mask.lfd").data[..., 0] > 0.5
        pair = SynthPair(read_lfd(d / "clean.lfd"), read_lfd(d / "degraded.lfd"), mask, spec,
                         combined_alpha(spec), name)
        pairs.append((pair, role))
    return pairs
