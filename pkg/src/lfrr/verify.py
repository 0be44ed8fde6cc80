"""Self-verification: interpolation properties, gradient checks and oracles.

Every check returns a :class:`Check` holding the measured quantity and the
bound it was compared against, so the command-line report and the test
suite read the same numbers.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import gaussian_filter_matrix, loss_epi, loss_mae, loss_ssim
from .network import (
    ModelConfig,
    dgeb_forward,
    init_params,
    mdfb_forward,
    model_forward,
    rsm_forward,
    seb_forward,
)
from .resample import (
    clamp_positions,
    init_positions,
    interpolate_4d,
    interpolate_4d_array,
    interpolate_4d_two_stage,
    interpolation_weights,
    planar_warp_offsets,
)
from .synth import Plane, SceneSpec, Texture, erode, make_dataset, oracle_offsets, synth_background

ORDER_TOL = 1e-12
UNITY_TOL = 1e-12
GRAD_TOL = 1e-5
SSIM_GRAD_TOL = 1e-4
PLANAR_TOL = 1e-5
ORACLE_TOL = 2.0 / 255.0


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""
    seconds: float = 0.0

    def line(self, timings: bool = False) -> str:
        """One report line; timings are opt-in so repeated runs print identical text."""
        verdict = "PASS" if self.passed else "FAIL"
        extra = f" {self.detail}" if self.detail else ""
        clock = f" [{self.seconds:.2f}s]" if timings else ""
        return f"{verdict} {self.name}: {self.value:.3e} (bound {self.tol:g}){extra}{clock}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        check = fn(*args, **kwargs)
        check.seconds = time.perf_counter() - t0
        return check

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _random_dims(rng, low=2, high=12):
    U, V = (int(v) for v in rng.integers(2, 5, 2))
    X, Y = (int(v) for v in rng.integers(low, high + 1, 2))
    return U, V, X, Y


def random_positions(rng, dims, n=None, margin=0.0):
    """Uniform positions inside ``[margin, dim - 1 - margin]`` per axis."""
    shape = (tuple(dims[:4]) if n is None else (n,)) + (4,)
    hi = np.array(dims[:4], dtype=float) - 1 - margin
    return margin + rng.random(shape) * (hi - margin)


# -- interpolation properties ---------------------------------------------------

@_timed
def check_identity(n: int = 50, seed: int = 0) -> Check:
    """Sampling at the initial positions returns the input bit for bit."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n):
        U, V, X, Y = _random_dims(rng)
        C = int(rng.integers(1, 4))
        I = rng.random((U, V, X, Y, C))
        P0 = init_positions(U, V, X, Y)
        if not np.array_equal(interpolate_4d_array(I, P0), I):
            bad += 1
        if not np.array_equal(interpolate_4d(Tensor(I), Tensor(P0)).data, I):
            bad += 1
    return Check("interpolation identity", bad == 0, float(bad), 0.0, f"{n} light fields, mismatches={bad}")


@_timed
def check_order_invariance(n: int = 50, seed: int = 1) -> Check:
    """Spatial-then-angular and angular-then-spatial passes agree (and match the 16-tap form)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    with ad.precision("f64"):
        for _ in range(n):
            dims = _random_dims(rng)
            I = rng.random(dims + (3,))
            P = clamp_positions(rng.uniform(-1.0, 1.0, dims + (4,)) * 3 + init_positions(*dims), dims)
            a = interpolate_4d_two_stage(I, P, "spatial_first")
            b = interpolate_4d_two_stage(I, P, "angular_first")
            c = interpolate_4d_array(I, P)
            worst = max(worst, float(np.abs(a - b).max()), float(np.abs(a - c).max()))
    return Check("order invariance", worst <= ORDER_TOL, worst, ORDER_TOL, f"{n} (I, P) pairs, max abs diff")


@_timed
def check_partition_of_unity(n: int = 100_000, seed: int = 2) -> Check:
    rng = np.random.default_rng(seed)
    dims = (5, 7, 33, 29)
    raw = rng.uniform(-2.0, 1.0, (n, 4)) + rng.random((n, 4)) * (np.array(dims) + 2.0)
    P = clamp_positions(raw, dims)
    w = interpolation_weights(P, dims)
    worst = float(np.abs(w.sum(axis=-1) - 1.0).max())
    negative = bool((w < 0).any())
    ok = worst <= UNITY_TOL and not negative
    return Check("partition of unity", ok, worst, UNITY_TOL, f"{n} clamped positions, max |sum - 1|")


# -- gradient checks ----------------------------------------------------------------

# A case builds (f, inputs, tol, grad_check kwargs) from a generator.
GradCase = Callable[[np.random.Generator], tuple]


KINK_MARGIN = 1e-4


def _t(rng, shape, lo=None, hi=None):
    if lo is None:
        return Tensor(rng.standard_normal(shape))
    return Tensor(rng.uniform(lo, hi, shape))


def _away_from_kink(rng, shape):
    """Normal samples pushed at least ``KINK_MARGIN`` away from 0."""
    x = rng.standard_normal(shape)
    return Tensor(np.where(np.abs(x) < KINK_MARGIN, np.copysign(KINK_MARGIN, x) + x, x))


def _unary(op):
    # every unary case is drawn away from 0, the kink of absolute and leaky_relu
    def case(rng):
        x = _away_from_kink(rng, (2, 2, 3, 3, 2))
        w = rng.standard_normal(x.shape)
        return (lambda a: ad.reduce_mean(op(a) * Tensor(w))), [x], GRAD_TOL, {}

    return case


def _binary(op, b_shape=(2, 2, 3, 3, 2), positive=False):
    def case(rng):
        a = _t(rng, (2, 2, 3, 3, 2))
        b = _t(rng, b_shape, 0.5, 1.5) if positive else _t(rng, b_shape)
        w = rng.standard_normal(a.shape)
        return (lambda x, y: ad.reduce_mean(op(x, y) * Tensor(w))), [a, b], GRAD_TOL, {}

    return case


def _case_concat(rng):
    parts = [_t(rng, (2, 1, 3, 2, c)) for c in (1, 2, 3)]
    w = rng.standard_normal((2, 1, 3, 2, 6))
    return (lambda *p: ad.reduce_mean(ad.concat_channels(*p) * Tensor(w))), parts, GRAD_TOL, {}


def _case_pool(rng):
    x = _t(rng, (2, 2, 3, 4, 3))
    w = rng.standard_normal((2, 2, 1, 1, 3))
    return (lambda a: ad.reduce_mean(ad.global_avg_pool_spatial(a) * Tensor(w))), [x], GRAD_TOL, {}


def _case_affine(rng):
    x = _t(rng, (2, 2, 1, 1, 4))
    W = _t(rng, (4, 3))
    b = _t(rng, (3,))
    w = rng.standard_normal((2, 2, 1, 1, 3))
    return (lambda a, m, c: ad.reduce_mean(ad.affine(a, m, c) * Tensor(w))), [x, W, b], GRAD_TOL, {}


def _case_forward_diff(rng):
    x = _t(rng, (3, 2, 4, 3, 2))
    axis = int(rng.integers(4))
    w = rng.standard_normal(ad.forward_diff(x, axis).shape)
    return (lambda a: ad.reduce_mean(ad.forward_diff(a, axis) * Tensor(w))), [x], GRAD_TOL, {}


def _case_spatial_filter(rng):
    x = _t(rng, (2, 2, 6, 5, 1))
    mx, my = gaussian_filter_matrix(6), gaussian_filter_matrix(5)
    w = rng.standard_normal(x.shape)
    return (lambda a: ad.reduce_mean(ad.spatial_filter(a, mx, my) * Tensor(w))), [x], GRAD_TOL, {}


def _case_conv(plane):
    def case(rng):
        k = int(rng.choice([1, 3]))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        f = _t(rng, (3, 3, 4, 4, cin))
        W = _t(rng, (k, k, cin, cout))
        b = _t(rng, (cout,))
        w = rng.standard_normal((3, 3, 4, 4, cout))
        fn = lambda a, m, c: ad.reduce_mean(ad.axis_conv(a, m, c, plane) * Tensor(w))  # noqa: E731
        return fn, [f, W, b], GRAD_TOL, {"max_coords": 27}

    return case


def _case_clamp(rng):
    dims = (3, 2, 5, 4)
    P = Tensor(rng.uniform(-1.5, 1.5, dims + (4,)) + init_positions(*dims))
    w = rng.standard_normal(P.shape)
    return (lambda p: ad.reduce_mean(clamp_positions(p, dims) * Tensor(w))), [P], GRAD_TOL, {}


def _case_interp(which):
    def case(rng):
        dims = (3, 3, 5, 4)
        I = Tensor(rng.random(dims + (2,)))
        P = Tensor(random_positions(rng, dims))
        w = rng.standard_normal(dims + (2,))
        if which == "I":
            return (lambda a: ad.reduce_mean(interpolate_4d(a, P) * Tensor(w))), [I], GRAD_TOL, {}
        return (lambda p: ad.reduce_mean(interpolate_4d(I, p) * Tensor(w))), [P], GRAD_TOL, {}

    return case


_TOY = ModelConfig(M=1, N=1, c=4, r=2)
_TOY_WIDE = ModelConfig(M=1, N=1, c=8, r=2)


def _toy_params(rng, cfg=_TOY):
    """Toy network weights with the zero-initialised heads made nonzero."""
    params = init_params(cfg, seed=int(rng.integers(2**31)))
    for name, p in params.items():
        if not np.any(p.data):
            p.data = rng.uniform(-0.2, 0.2, p.shape)
    return params


def _case_mdfb(rng):
    params = _toy_params(rng, _TOY_WIDE)
    names = sorted(k for k in params if k.startswith("rsm.mdfb.0."))
    F = _t(rng, (2, 2, 4, 4, 8))
    w = rng.standard_normal(F.shape)

    def fn(x, *ps):
        local = dict(zip(names, ps))
        return ad.reduce_mean(mdfb_forward(x, local, "rsm.mdfb.0", _TOY.slope) * Tensor(w))

    return fn, [F] + [params[k] for k in names], GRAD_TOL, {"joint": True, "n_probes": 16}


def _case_dgeb(rng):
    params = _toy_params(rng, _TOY_WIDE)
    names = sorted(k for k in params if k.startswith("rm.block.0."))
    F_I, F_O = _t(rng, (2, 2, 4, 4, 8)), _t(rng, (2, 2, 4, 4, 8))
    w1, w2 = rng.standard_normal(F_I.shape), rng.standard_normal(F_I.shape)

    def fn(a, b, *ps):
        local = dict(zip(names, ps))
        E_I, E_O = dgeb_forward(a, b, local, "rm.block.0", _TOY)
        return ad.reduce_mean(E_I * Tensor(w1)) + ad.reduce_mean(E_O * Tensor(w2))

    return fn, [F_I, F_O] + [params[k] for k in names], GRAD_TOL, {"joint": True, "n_probes": 16}


def _case_dgeb_pair_only(rng):
    # same block, gradients with respect to the two feature fields alone
    params = _toy_params(rng, _TOY_WIDE)
    F_I, F_O = _t(rng, (2, 2, 4, 4, 8)), _t(rng, (2, 2, 4, 4, 8))
    w1, w2 = rng.standard_normal(F_I.shape), rng.standard_normal(F_I.shape)

    def fn(a, b):
        E_I, E_O = dgeb_forward(a, b, params, "rm.block.0", _TOY_WIDE)
        return ad.reduce_mean(E_I * Tensor(w1)) + ad.reduce_mean(E_O * Tensor(w2))

    return fn, [F_I, F_O], GRAD_TOL, {}


def _case_seb(rng):
    params = _toy_params(rng)
    names = sorted(k for k in params if k.startswith("rm.seb."))
    F = _t(rng, (2, 2, 4, 4, 8))
    w = rng.standard_normal(F.shape)

    def fn(x, *ps):
        return ad.reduce_mean(seb_forward(x, dict(zip(names, ps)), "rm.seb", _TOY.slope) * Tensor(w))

    return fn, [F] + [params[k] for k in names], GRAD_TOL, {"joint": True, "n_probes": 16}


def _case_loss(loss, tol):
    def case(rng):
        pred = _t(rng, (2, 2, 7, 6, 3), 0.05, 0.95)
        gt = Tensor(rng.uniform(0.05, 0.95, pred.shape))
        return (lambda p: loss(p, gt)), [pred], tol, {}

    return case


def _case_model(rng):
    params = _toy_params(rng)
    names = sorted(params)
    I = Tensor(rng.uniform(0.1, 0.9, (2, 2, 5, 5, 3)))
    gt = Tensor(rng.uniform(0.1, 0.9, I.shape))
    w = rng.standard_normal(I.shape)

    def fn(x, *ps):
        O_i, O_f = model_forward(x, dict(zip(names, ps)), _TOY)
        return ad.reduce_mean(O_f * Tensor(w)) + loss_mae(O_i, gt)

    return fn, [I] + [params[k] for k in names], GRAD_TOL, {"joint": True, "n_probes": 16}


GRAD_CASES: dict[str, GradCase] = {
    "add": _binary(ad.add, (2, 2, 1, 3, 2)),
    "sub": _binary(ad.sub, (2, 2, 3, 3, 1)),
    "mul": _binary(ad.mul, (1, 2, 3, 1, 2)),
    "div": _binary(ad.div, (2, 2, 3, 3, 1), positive=True),
    "scale": _unary(lambda a: ad.scale(a, -1.7)),
    "absolute": _unary(ad.absolute),
    "square": _unary(ad.square),
    "leaky_relu": _unary(lambda a: ad.leaky_relu(a, 0.1)),
    "sigmoid": _unary(ad.sigmoid),
    "identity": _unary(ad.identity),
    "reduce_mean": _unary(lambda a: ad.square(ad.reduce_mean(a))),
    "concat_channels": _case_concat,
    "global_avg_pool_spatial": _case_pool,
    "affine": _case_affine,
    "forward_diff": _case_forward_diff,
    "spatial_filter": _case_spatial_filter,
    "axis_conv.spatial": _case_conv("spatial"),
    "axis_conv.angular": _case_conv("angular"),
    "axis_conv.epi_h": _case_conv("epi_h"),
    "axis_conv.epi_v": _case_conv("epi_v"),
    "clamp_positions": _case_clamp,
    "interpolate_4d.grad_I": _case_interp("I"),
    "interpolate_4d.grad_P": _case_interp("P"),
    "mdfb": _case_mdfb,
    "dgeb": _case_dgeb,
    "dgeb.features": _case_dgeb_pair_only,
    "seb": _case_seb,
    "loss_mae": _case_loss(loss_mae, GRAD_TOL),
    "loss_ssim": _case_loss(loss_ssim, SSIM_GRAD_TOL),
    "loss_epi": _case_loss(loss_epi, GRAD_TOL),
    "model_end_to_end": _case_model,
}


def gradcheck_case(name: str, seed: int, tol: float | None = None) -> ad.GradCheckReport:
    rng = np.random.default_rng([seed, sorted(GRAD_CASES).index(name)])
    with ad.precision("f64"):
        fn, inputs, case_tol, kwargs = GRAD_CASES[name](rng)
        return ad.grad_check(fn, inputs, tol=case_tol if tol is None else max(tol, 0.0), seed=seed, **kwargs)


def gradcheck_suite(n_seeds: int = 20, tol: float | None = None, names=None) -> list[Check]:
    """One :class:`Check` per case, aggregated over ``n_seeds`` seeds."""
    out = []
    for name in names or GRAD_CASES:
        t0 = time.perf_counter()
        worst, bound, n = 0.0, 0.0, 0
        for seed in range(n_seeds):
            rep = gradcheck_case(name, seed, tol)
            worst = max(worst, rep.max_rel_err)
            bound = rep.tol
            n += rep.n_checks
        check = Check(f"gradcheck {name}", worst <= bound, worst, bound, f"{n_seeds} seeds, {n} probes")
        check.seconds = time.perf_counter() - t0
        out.append(check)
    return out


# -- geometric oracles --------------------------------------------------------------

PLANAR_CASES = (
    # (disparity, du, dv): integer d*du keeps every sample on the pixel grid
    (0.0, 1, 0),
    (1.0, 1, 1),
    (-1.0, -1, 2),
    (2.0, -2, -1),
    (0.5, 2, -2),
    (-1.5, 2, 0),
)


def planar_lf(d: float, dims=(5, 5, 24, 24), kind: str = "noise", seed: int = 0):
    spec = SceneSpec(seed, dims, (Plane(d, Texture(kind, seed, 9.0, (3.0, 7.0))),))
    return synth_background(spec)


def planar_error(lf_data: np.ndarray, d: float, du: int, dv: int) -> tuple[float, int]:
    """Max interior error of re-sampling a planar LF with offsets ``(du, dv, d*du, d*dv)``."""
    dims = lf_data.shape[:4]
    offsets = planar_warp_offsets(d, du, dv, dims)
    O_i, _, _ = rsm_forward(Tensor(lf_data), {}, ModelConfig(), offsets=offsets)
    P = init_positions(*dims) + offsets
    hi = np.array(dims, dtype=float) - 1
    interior = np.all((P >= 0) & (P <= hi), axis=-1)
    if not interior.any():
        return 0.0, 0
    err = np.abs(O_i.data - lf_data)[interior]
    return float(err.max()), int(interior.sum())


@_timed
def check_planar_warp() -> Check:
    worst, count = 0.0, 0
    with ad.precision("f64"):
        for k, (d, du, dv) in enumerate(PLANAR_CASES):
            for kind in ("noise", "checker"):
                lf = planar_lf(d, kind=kind, seed=k)
                err, n = planar_error(lf.data, d, du, dv)
                worst, count = max(worst, err), count + n
    return Check("planar-warp invariance", worst <= PLANAR_TOL, worst, PLANAR_TOL,
                 f"{len(PLANAR_CASES) * 2} planar LFs, {count} interior pixels, max abs error")


def oracle_recovery(pairs) -> tuple[float, float, int]:
    """Worst per-scene mean abs error of oracle re-sampling on the eroded mask.

    Returns ``(worst_error, unreachable_fraction, scenes_used)``.
    """
    worst, unreachable, masked, used = 0.0, 0, 0, 0
    for pair in pairs:
        if len(pair.spec.background) != 1:
            continue
        oracle = oracle_offsets(pair)
        O_i, _, _ = rsm_forward(Tensor(pair.degraded.data), {}, ModelConfig(), offsets=oracle.offsets)
        blur = max(d.blur for d in pair.spec.raindrops)
        region = erode(pair.occlusion_mask, blur) & ~oracle.unreachable
        unreachable += int(oracle.unreachable.sum())
        masked += int(pair.occlusion_mask.sum())
        if not region.any():
            continue
        err = float(np.abs(O_i.data - pair.clean.data)[region].mean())
        worst = max(worst, err)
        used += 1
    return worst, unreachable / max(masked, 1), used


@_timed
def check_oracle_recovery(n_scenes: int = 16, seed: int = 7) -> Check:
    with ad.precision("f64"):
        pairs = make_dataset(n_scenes, dims=(3, 3, 48, 48), seed=seed)
        worst, frac, used = oracle_recovery(pairs)
    ok = worst <= ORACLE_TOL and used > 0
    return Check("oracle-offset recovery", ok, worst, ORACLE_TOL,
                 f"{used} single-plane scenes, unreachable fraction {frac:.3f}, worst scene mean abs error")


def property_suite(n_seeds: int = 20) -> list[Check]:
    checks = [check_identity(), check_order_invariance(), check_partition_of_unity()]
    checks += gradcheck_suite(n_seeds)
    checks += [check_planar_warp(), check_oracle_recovery()]
    return checks


def all_passed(checks) -> bool:
    return all(c.passed for c in checks) and not any(math.isnan(c.value) for c in checks)
