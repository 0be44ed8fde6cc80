"""4D re-sampling: position grids, clamping and separable bilinear interpolation.

A position is a real 4-vector ``(u, v, x, y)``.  Along each axis the two
integer neighbours of a coordinate ``b`` are ``i0 = min(floor(b), n - 2)``
and ``i0 + 1`` with weights ``1 - t`` and ``t`` where ``t = b - i0``; these
equal ``max(0, 1 - |q - b|)`` for both neighbours, and the sixteen products
over the four axes form the interpolation weights.  The derivative with
respect to ``b`` is taken as ``value(i0 + 1) - value(i0)``: the right
derivative at interior integers and the left derivative at the upper edge.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from .autodiff import Tensor, _record, as_tensor
from .errors import PositionOutOfRange, ShapeMismatch

CORNERS = tuple(product((0, 1), repeat=4))


def init_positions(U: int, V: int, X: int, Y: int, dtype=np.float64) -> np.ndarray:
    """Grid whose entry at ``(u, v, x, y)`` is exactly ``(u, v, x, y)``."""
    axes = [np.arange(n, dtype=dtype) for n in (U, V, X, Y)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def clamp_positions(P, dims):
    """Clamp each coordinate to ``[0, dim - 1]``.

    On a :class:`Tensor` the adjoint passes gradient through coordinates
    that were already in range and zeroes those that were clamped.
    """
    hi = np.asarray(dims[:4], dtype=float) - 1.0
    if not isinstance(P, Tensor):
        return np.clip(P, 0.0, hi.astype(np.asarray(P).dtype))
    hi = hi.astype(P.data.dtype)
    inside = (P.data >= 0.0) & (P.data <= hi)
    return _record("clamp_positions", np.clip(P.data, 0.0, hi), (P,), lambda g: (g * inside,))


def _check(I: np.ndarray, P: np.ndarray):
    if I.ndim != 5 or P.ndim != 5 or P.shape[-1] != 4 or P.shape[:4] != I.shape[:4]:
        raise ShapeMismatch(f"positions {P.shape} do not match light field {I.shape}")
    hi = np.asarray(I.shape[:4]) - 1
    if not np.all(np.isfinite(P)) or np.any(P < 0) or np.any(P > hi):
        raise PositionOutOfRange("positions must be clamped to the light field's range")


def _axis_terms(P: np.ndarray, dims):
    """Per axis: lower neighbour, upper neighbour and fractional weight."""
    terms = []
    for a, n in enumerate(dims):
        b = P[..., a]
        i0 = np.clip(np.floor(b), 0, max(n - 2, 0)).astype(np.intp)
        t = b - i0
        i1 = np.minimum(i0 + 1, n - 1)
        terms.append((i0, i1, t))
    return terms


def _strides(dims):
    U, V, X, Y = dims
    return (V * X * Y, X * Y, Y, 1)


def _corner(terms, strides, corner):
    """Flat source index and weight of one of the sixteen neighbours."""
    lin = 0
    w = 1.0
    for (i0, i1, t), s, bit in zip(terms, strides, corner):
        lin = lin + (i1 if bit else i0) * s
        w = w * (t if bit else 1.0 - t)
    return lin, w


def interpolate_4d_array(I: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Direct sixteen-neighbour evaluation; the same position serves all channels."""
    _check(I, P)
    dims = I.shape[:4]
    C = I.shape[4]
    flat = I.reshape(-1, C)
    terms = _axis_terms(P, dims)
    strides = _strides(dims)
    out = np.zeros(I.shape, dtype=np.result_type(I, P))
    for corner in CORNERS:
        lin, w = _corner(terms, strides, corner)
        out += w[..., None] * flat[lin]
    return out


def interpolate_4d_two_stage(I: np.ndarray, P: np.ndarray, order: str = "spatial_first") -> np.ndarray:
    """Evaluate as two separable 2D bilinear passes in the given order.

    ``spatial_first`` interpolates over ``(x, y)`` in each of the four
    bracketing views and then blends those across ``(u, v)``;
    ``angular_first`` blends views first and interpolates spatially last.
    """
    if order not in ("spatial_first", "angular_first"):
        raise ValueError(f"unknown order {order!r}")
    _check(I, P)
    dims = I.shape[:4]
    C = I.shape[4]
    flat = I.reshape(-1, C)
    (u0, u1, tu), (v0, v1, tv), (x0, x1, tx), (y0, y1, ty) = _axis_terms(P, dims)
    su, sv, sx, sy = _strides(dims)
    ang = [(u0 * su + v0 * sv, (1 - tu) * (1 - tv)), (u0 * su + v1 * sv, (1 - tu) * tv),
           (u1 * su + v0 * sv, tu * (1 - tv)), (u1 * su + v1 * sv, tu * tv)]
    spa = [(x0 * sx + y0 * sy, (1 - tx) * (1 - ty)), (x0 * sx + y1 * sy, (1 - tx) * ty),
           (x1 * sx + y0 * sy, tx * (1 - ty)), (x1 * sx + y1 * sy, tx * ty)]
    outer, inner = (ang, spa) if order == "spatial_first" else (spa, ang)
    out = np.zeros(I.shape, dtype=np.result_type(I, P))
    for lin_o, w_o in outer:
        stage = np.zeros_like(out)
        for lin_i, w_i in inner:
            stage += w_i[..., None] * flat[lin_o + lin_i]
        out += w_o[..., None] * stage
    return out


def interpolation_weights(P: np.ndarray, dims) -> np.ndarray:
    """The sixteen weights per position, ``[..., 16]``."""
    terms = _axis_terms(P, dims)
    strides = _strides(dims)
    return np.stack([_corner(terms, strides, c)[1] for c in CORNERS], axis=-1)


def interpolate_4d_backward(I: np.ndarray, P: np.ndarray, seed: np.ndarray, need_I: bool = True,
                            need_P: bool = True):
    """Adjoints ``(grad_I, grad_P)`` of :func:`interpolate_4d_array` for output gradient ``seed``.

    ``grad_I`` scatters ``seed * weight`` to the sixteen neighbours in a
    fixed corner order; ``grad_P`` sums the channel contributions into the
    shared 4-vector.
    """
    _check(I, P)
    dims = I.shape[:4]
    C = I.shape[4]
    flat = I.reshape(-1, C)
    seed2 = np.asarray(seed).reshape(-1, C)
    terms = _axis_terms(P, dims)
    strides = _strides(dims)
    n_src = flat.shape[0]
    lins, ws = [], []
    grad_P = np.zeros(P.shape, dtype=np.result_type(I, P)) if need_P else None
    for corner in CORNERS:
        lin, w = _corner(terms, strides, corner)
        lins.append(lin.ravel())
        ws.append(w.ravel())
        if need_P:
            s = np.einsum("nc,nc->n", flat[lin.ravel()], seed2).reshape(lin.shape)
            for a in range(4):
                partial = s.copy()
                for b, ((_, _, t), bit) in enumerate(zip(terms, corner)):
                    if b != a:
                        partial *= t if bit else 1.0 - t
                grad_P[..., a] += partial if corner[a] else -partial
    grad_I = None
    if need_I:
        lin_all = np.concatenate(lins)
        w_all = np.concatenate(ws)
        grad_I = np.empty((n_src, C), dtype=np.result_type(I, seed2))
        for c in range(C):
            seed_c = np.tile(seed2[:, c], len(CORNERS))
            grad_I[:, c] = np.bincount(lin_all, weights=w_all * seed_c, minlength=n_src)
        grad_I = grad_I.reshape(I.shape)
    return grad_I, grad_P


def interpolate_4d(I, P):
    """Re-sample light field ``I`` at clamped positions ``P``.

    Accepts arrays or tensors; with tensors the op is recorded on the
    active tape with adjoints for both the light field and the positions.
    """
    if not isinstance(I, Tensor) and not isinstance(P, Tensor):
        return interpolate_4d_array(np.asarray(I), np.asarray(P))
    I, P = as_tensor(I), as_tensor(P)
    out = interpolate_4d_array(I.data, P.data)

    def adjoint(g):
        return interpolate_4d_backward(I.data, P.data, g, need_I=I.requires_grad, need_P=P.requires_grad)

    return _record("interpolate_4d", out, (I, P), adjoint)


def planar_warp_offsets(d: float, du: float, dv: float, dims) -> np.ndarray:
    """Constant offset field ``(du, dv, d*du, d*dv)``.

    Convention: a scene point at disparity ``d`` seen at ``x`` in view ``u``
    appears at ``x + d * (u' - u)`` in view ``u'`` (and likewise ``y``/``v``).
    """
    U, V, X, Y = dims[:4]
    out = np.empty((U, V, X, Y, 4))
    out[...] = (du, dv, d * du, d * dv)
    return out
