"""Minimal reverse-mode differentiation over numpy arrays.

Only the operators the network needs are provided.  Each op computes its
forward value with numpy and, when a :class:`Tape` is active and some input
requires a gradient, appends a record holding a closure for its adjoint.

Broadcasting in the elementwise ops is restricted to two cases: a scalar
operand, or operands of equal rank whose mismatched axes have size 1 in one
of them (e.g. ``[U,V,X,Y,1]`` attention maps against ``[U,V,X,Y,C]``
features, or ``[U,V,1,1,C]`` channel scales).
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteGradient, NotScalar, ShapeMismatch

_PRECISIONS = {"f64": np.float64, "f32": np.float32}
_dtype = np.float64
_adjoint_faults: set[str] = set()


def set_precision(mode: str) -> None:
    """Select the dtype new tensors are created with (``"f64"`` or ``"f32"``)."""
    global _dtype
    _dtype = _PRECISIONS[mode]


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(mode: str):
    global _dtype
    previous = _dtype
    set_precision(mode)
    try:
        yield
    finally:
        _dtype = previous


@contextlib.contextmanager
def inject_adjoint_fault(op_name: str):
    """Negate the adjoint of ``op_name`` while active.  Test hook only."""
    _adjoint_faults.add(op_name)
    try:
        yield
    finally:
        _adjoint_faults.discard(op_name)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    name: str
    inputs: tuple
    output: Tensor
    adjoint: Callable


class Tape:
    """Ordered log of executed ops; use as a context manager to record."""

    _active: list["Tape"] = []

    def __init__(self):
        self.records: list[Record] = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.remove(self)
        return False

    def backward(self, loss: Tensor, seed=None) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires it.

        Leaves not connected to ``loss`` keep their current gradient.
        Calling twice accumulates twice.
        """
        if loss.data.size != 1:
            raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data) if seed is None else np.asarray(seed)}
        leaves = {id(loss): loss}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            leaves.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.adjoint(g)
            if rec.name in _adjoint_faults:
                in_grads = [None if gi is None else -gi for gi in in_grads]
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    leaves[key] = t
        for key, g in grads.items():
            t = leaves[key]
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient("non-finite gradient reached a leaf")
            g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _record(name: str, out_data, inputs: Sequence[Tensor], adjoint) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = False
    if Tape._active and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        Tape._active[-1].records.append(Record(name, tuple(inputs), out, adjoint))
    return out


def _broadcast_shape(a: np.ndarray, b: np.ndarray):
    if a.shape == b.shape:
        return a.shape
    if a.ndim == 0 or b.ndim == 0 or a.size == 1 and a.ndim <= b.ndim or b.size == 1 and b.ndim <= a.ndim:
        return np.broadcast_shapes(a.shape, b.shape)
    if a.ndim != b.ndim or any(p != q and 1 not in (p, q) for p, q in zip(a.shape, b.shape)):
        raise ShapeMismatch(f"cannot combine shapes {a.shape} and {b.shape}")
    return np.broadcast_shapes(a.shape, b.shape)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.data, b.data)
    return _record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.data, b.data)
    return _record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.data, b.data)
    return _record(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.data, b.data)
    out = a.data / b.data

    def adjoint(g):
        ga = g / b.data
        gb = _unbroadcast(-ga * out, b.shape) if b.requires_grad else None
        return _unbroadcast(ga, a.shape) if a.requires_grad else None, gb

    return _record("div", out, (a, b), adjoint)


def scale(a: Tensor, k: float) -> Tensor:
    return _record("scale", a.data * k, (a,), lambda g: (g * k,))


def absolute(a: Tensor) -> Tensor:
    return _record("absolute", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a: Tensor) -> Tensor:
    return _record("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


# -- pointwise nonlinearities -------------------------------------------------

def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    x = a.data
    pos = x >= 0
    out = np.where(pos, x, slope * x)
    # right derivative at 0
    return _record("leaky_relu", out, (a,), lambda g: (np.where(pos, g, slope * g),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def identity(a: Tensor) -> Tensor:
    return _record("identity", a.data.copy(), (a,), lambda g: (g,))


def pointwise(a: Tensor, kind: str, slope: float = 0.1) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "identity":
        return identity(a)
    raise ValueError(f"unknown pointwise kind {kind!r}")


# -- reductions and reshaping --------------------------------------------------

def reduce_mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    dtype = a.data.dtype
    return _record(
        "reduce_mean",
        np.asarray(a.data.mean(), dtype=dtype),
        (a,),
        lambda g: (np.full(shape, g / n, dtype=dtype),),
    )


def concat_channels(*parts: Tensor) -> Tensor:
    """Concatenate along the last (channel) axis."""
    lead = parts[0].shape[:-1]
    if any(p.shape[:-1] != lead for p in parts):
        raise ShapeMismatch(f"concat needs matching leading axes, got {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])
    return _record(
        "concat_channels",
        np.concatenate([p.data for p in parts], axis=-1),
        parts,
        lambda g: tuple(g[..., lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])),
    )


def global_avg_pool_spatial(f: Tensor) -> Tensor:
    """Mean over ``x, y`` of a ``[U,V,X,Y,C]`` field, kept as ``[U,V,1,1,C]``."""
    if f.data.ndim != 5:
        raise ShapeMismatch(f"expected [U,V,X,Y,C], got {f.shape}")
    X, Y = f.shape[2:4]
    shape = f.shape
    return _record(
        "global_avg_pool_spatial",
        f.data.mean(axis=(2, 3), keepdims=True),
        (f,),
        lambda g: (np.broadcast_to(g / (X * Y), shape),),
    )


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` applied over the last axis."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"affine: input has {x.shape[-1]} features, weight expects {W.shape[0]}")
    out = x.data @ W.data
    if b is not None:
        out = out + b.data

    def adjoint(g):
        gx = g @ W.data.T
        gW = x.data.reshape(-1, W.shape[0]).T @ g.reshape(-1, W.shape[1])
        gb = None if b is None else g.reshape(-1, W.shape[1]).sum(axis=0)
        return gx, gW, gb

    inputs = (x, W) if b is None else (x, W, b)
    return _record("affine", out, inputs, adjoint)


def forward_diff(a: Tensor, axis: int) -> Tensor:
    """First-order forward difference ``a[i+1] - a[i]`` along ``axis``."""
    hi = [slice(None)] * a.data.ndim
    lo = [slice(None)] * a.data.ndim
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    hi, lo = tuple(hi), tuple(lo)
    shape = a.shape

    def adjoint(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[hi] += g
        out[lo] -= g
        return (out,)

    return _record("forward_diff", a.data[hi] - a.data[lo], (a,), adjoint)


def spatial_filter(a: Tensor, mx: np.ndarray, my: np.ndarray) -> Tensor:
    """Separable linear filter over axes 2, 3 given as dense ``[X,X]`` and ``[Y,Y]`` matrices."""
    # out[u,v,i,j,c] = sum_{x,y} mx[i,x] my[j,y] a[u,v,x,y,c]
    mx = np.asarray(mx, dtype=a.data.dtype)
    my = np.asarray(my, dtype=a.data.dtype)
    t = np.einsum("ix,uvxyc->uviyc", mx, a.data, optimize=True)
    out = np.einsum("jy,uviyc->uvijc", my, t, optimize=True)

    def adjoint(g):
        t = np.einsum("ix,uvijc->uvxjc", mx, g, optimize=True)
        return (np.einsum("jy,uvxjc->uvxyc", my, t, optimize=True),)

    return _record("spatial_filter", out, (a,), adjoint)


# -- convolution ----------------------------------------------------------------

PLANES = {"spatial": (2, 3), "angular": (0, 1), "epi_h": (0, 2), "epi_v": (1, 3)}


def _plane_perm(plane: str):
    try:
        axes = PLANES[plane]
    except KeyError:
        raise ValueError(f"unknown conv plane {plane!r}") from None
    batch = [i for i in range(4) if i not in axes]
    perm = (*batch, *axes, 4)
    return perm, tuple(np.argsort(perm))


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Zero-padded ``k x k`` patches over axes 2, 3 as rows ordered ``(i, j, c)``."""
    c = x.shape[-1]
    if k == 1:
        return x.reshape(-1, c)
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win.transpose(0, 1, 2, 3, 5, 6, 4).reshape(-1, k * k * c)


def axis_conv(f: Tensor, W: Tensor, b: Tensor, plane: str = "spatial") -> Tensor:
    """Same-size 2D cross-correlation of a ``[U,V,X,Y,C]`` field over one axis plane.

    ``W`` is ``[k, k, Cin, Cout]`` with odd ``k``; zero padding ``k // 2``,
    stride 1, weights shared across the two remaining axes.
    """
    if f.data.ndim != 5:
        raise ShapeMismatch(f"expected [U,V,X,Y,C], got {f.shape}")
    k, k2, cin, cout = W.shape
    if k != k2 or k % 2 == 0:
        raise ShapeMismatch(f"kernel must be square and odd, got {W.shape}")
    if f.shape[-1] != cin:
        raise ShapeMismatch(f"input has {f.shape[-1]} channels, kernel expects {cin}")
    if b.shape != (cout,):
        raise ShapeMismatch(f"bias shape {b.shape} != ({cout},)")
    perm, inv = _plane_perm(plane)
    x = f.data if plane == "spatial" else np.ascontiguousarray(f.data.transpose(perm))
    lead = x.shape[:4]
    cols = _im2col(x, k)
    wmat = W.data.reshape(k * k * cin, cout)
    out = (cols @ wmat + b.data).reshape(*lead, cout)
    if plane != "spatial":
        out = np.ascontiguousarray(out.transpose(inv))

    def adjoint(g):
        if plane != "spatial":
            g = np.ascontiguousarray(g.transpose(perm))
        g2 = g.reshape(-1, cout)
        gW = (cols.T @ g2).reshape(W.shape) if W.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        gx = None
        if f.requires_grad:
            # the input adjoint is a correlation of g with the flipped, transposed kernel
            wflip = W.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * cout, cin)
            gx = (_im2col(g, k) @ wflip).reshape(*lead, cin)
            if plane != "spatial":
                gx = gx.transpose(inv)
        return gx, gW, gb

    return _record("axis_conv", out, (f, W, b), adjoint)


# -- gradient checking ----------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checks: int
    tol: float

    def __str__(self):
        verdict = "pass" if self.passed else "FAIL"
        return f"{verdict} max_rel_err={self.max_rel_err:.3e} (tol {self.tol:g}, {self.n_checks} checks)"


def _tilt(dirs, grads):
    """Unit direction from random ``dirs``, plus the unit gradient when given."""
    def unit(parts):
        norm = math.sqrt(sum(float(np.sum(p * p)) for p in parts))
        return [p / norm for p in parts] if norm > 0 else parts

    dirs = unit(dirs)
    if grads is not None and any(np.any(g) for g in grads):
        dirs = unit([d + g for d, g in zip(dirs, unit(grads))])
    return dirs


def rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tol: float = 1e-5,
    h: float = 1e-6,
    max_coords: int = 48,
    n_probes: int = 12,
    seed: int = 0,
    joint: bool = False,
    aligned: bool = True,
) -> GradCheckReport:
    """Compare taped adjoints of scalar ``f(*inputs)`` with central differences.

    Inputs with at most ``max_coords`` entries are checked coordinate by
    coordinate; larger ones along ``n_probes`` random unit directions.
    With ``joint`` every probe perturbs all inputs at once, which keeps the
    cost independent of the number of inputs (used for whole networks).

    With ``aligned`` each random probe is tilted toward the analytic
    gradient (unit random direction plus unit gradient direction).  A probe
    nearly orthogonal to the gradient has a directional derivative close to
    the round-off floor of the difference quotient; tilting keeps it well
    above.  The numeric side never sees the analytic gradient's values, only
    the direction, so a wrong adjoint still shows as disagreement.
    Inputs should be float64.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
    tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    for g in analytic:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("analytic gradient is not finite")

    def evaluate() -> float:
        return float(f(*inputs).data)

    rng = np.random.default_rng(seed)
    worst = 0.0
    n = 0
    if joint:
        bases = [t.data.copy() for t in inputs]
        for _ in range(n_probes):
            dirs = _tilt([rng.standard_normal(t.shape) for t in inputs], analytic if aligned else None)
            values = []
            for sign in (1.0, -1.0):
                for t, b, d in zip(inputs, bases, dirs):
                    t.data = b + sign * h * d
                values.append(evaluate())
            for t, b in zip(inputs, bases):
                t.data = b
            numeric = (values[0] - values[1]) / (2 * h)
            directional = sum(float(np.sum(ga * d)) for ga, d in zip(analytic, dirs))
            worst = max(worst, rel_err(directional, numeric))
            n += 1
        return GradCheckReport(worst, worst <= tol, n, tol)
    for t, ga in zip(inputs, analytic):
        base = t.data.copy()
        if t.size <= max_coords:
            directions = (np.eye(t.size)[i].reshape(t.shape) for i in range(t.size))
        else:
            directions = [
                _tilt([rng.standard_normal(t.shape)], [ga] if aligned else None)[0] for _ in range(n_probes)
            ]
        for d in directions:
            t.data = base + h * d
            fp = evaluate()
            t.data = base - h * d
            fm = evaluate()
            t.data = base
            numeric = (fp - fm) / (2 * h)
            worst = max(worst, rel_err(float(np.sum(ga * d)), numeric))
            n += 1
    return GradCheckReport(worst, worst <= tol, n, tol)
