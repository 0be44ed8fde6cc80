"""Light-field container, slicing and 4D-consistent augmentation.

Axis order is fixed as ``[U, V, X, Y, C]`` with ``u`` outermost and the
channel innermost.  ``u`` pairs with ``x`` (horizontal EPIs live in the
``(u, x)`` plane) and ``v`` pairs with ``y``.  For display, ``u`` and ``x``
index rows while ``v`` and ``y`` index columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ChannelMismatch, DimensionMismatch, IndexOutOfRange, ValueOutOfRange

# BT.601 full-range luma weights, applied to values in [0, 1].
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class LightField:
    """Immutable 5-axis grid ``[U, V, X, Y, C]``.

    Values must be finite and lie in ``[0, 1]`` unless ``signed=True``, which
    is used for residual maps.
    """

    __slots__ = ("data", "signed")

    def __init__(self, data, *, signed: bool = False, copy: bool = True):
        arr = np.array(data, copy=copy)
        if arr.ndim != 5:
            raise DimensionMismatch(f"expected 5 axes [U,V,X,Y,C], got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionMismatch(f"every axis must be >= 1, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueOutOfRange("light field contains non-finite values")
        if not signed and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueOutOfRange(
                f"values must lie in [0, 1], got [{arr.min():.6g}, {arr.max():.6g}]"
            )
        arr.flags.writeable = False
        self.data = arr
        self.signed = signed

    @classmethod
    def clamped(cls, data) -> "LightField":
        arr = np.asarray(data)
        if not np.all(np.isfinite(arr)):
            raise ValueOutOfRange("light field contains non-finite values")
        return cls(np.clip(arr, 0.0, 1.0), copy=False)

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        return self.data.shape

    @property
    def U(self) -> int:
        return self.data.shape[0]

    @property
    def V(self) -> int:
        return self.data.shape[1]

    @property
    def X(self) -> int:
        return self.data.shape[2]

    @property
    def Y(self) -> int:
        return self.data.shape[3]

    @property
    def C(self) -> int:
        return self.data.shape[4]

    def __getitem__(self, index):
        return self.data[index]

    def __eq__(self, other):
        if not isinstance(other, LightField):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        kind = "signed " if self.signed else ""
        return f"LightField({kind}U={self.U}, V={self.V}, X={self.X}, Y={self.Y}, C={self.C})"


def flat_index(shape: Sequence[int], u: int, v: int, x: int, y: int, c: int) -> int:
    U, V, X, Y, C = shape
    return (((u * V + v) * X + x) * Y + y) * C + c


def unflatten(shape: Sequence[int], i: int) -> tuple[int, int, int, int, int]:
    U, V, X, Y, C = shape
    i, c = divmod(i, C)
    i, y = divmod(i, Y)
    i, x = divmod(i, X)
    u, v = divmod(i, V)
    return u, v, x, y, c


def lf_new(U: int, V: int, X: int, Y: int, C: int, data: Sequence[float]) -> LightField:
    """Build a light field from a flat sequence in ``u, v, x, y, c`` order."""
    dims = (U, V, X, Y, C)
    if any(d < 1 for d in dims):
        raise DimensionMismatch(f"dimensions must be >= 1, got {dims}")
    flat = np.asarray(data, dtype=np.float64).ravel()
    expected = U * V * X * Y * C
    if flat.size != expected:
        raise DimensionMismatch(f"expected {expected} values for {dims}, got {flat.size}")
    return LightField(flat.reshape(dims), copy=False)


def _as_array(lf) -> np.ndarray:
    return lf.data if isinstance(lf, LightField) else np.asarray(lf)


def subaperture_view(lf: LightField, u: int, v: int) -> np.ndarray:
    """The ``(u, v)`` view as an ``[X, Y, C]`` array (a read-only slice)."""
    U, V = lf.shape[:2]
    if not (0 <= u < U and 0 <= v < V):
        raise IndexOutOfRange(f"view ({u},{v}) outside angular grid {U}x{V}")
    return lf.data[u, v]


def microlens_image(lf: LightField, x: int, y: int) -> np.ndarray:
    """All views' samples of spatial location ``(x, y)`` as ``[U, V, C]``."""
    X, Y = lf.shape[2:4]
    if not (0 <= x < X and 0 <= y < Y):
        raise IndexOutOfRange(f"pixel ({x},{y}) outside spatial grid {X}x{Y}")
    return lf.data[:, :, x, y]


@dataclass(frozen=True)
class EPI:
    orientation: str
    plane: np.ndarray

    @property
    def channels(self) -> int:
        return self.plane.shape[-1]


def extract_epi(lf: LightField, orientation: str, fixed_a: int, fixed_b: int) -> EPI:
    """Slice an epipolar-plane image.

    ``horizontal`` fixes ``(v, y) = (fixed_a, fixed_b)`` and returns axes
    ``(u, x)``; ``vertical`` fixes ``(u, x) = (fixed_a, fixed_b)`` and returns
    axes ``(v, y)``.
    """
    U, V, X, Y, _ = lf.shape
    if orientation == "horizontal":
        if not (0 <= fixed_a < V and 0 <= fixed_b < Y):
            raise IndexOutOfRange(f"(v={fixed_a}, y={fixed_b}) outside ({V}, {Y})")
        plane = lf.data[:, fixed_a, :, fixed_b]
    elif orientation == "vertical":
        if not (0 <= fixed_a < U and 0 <= fixed_b < X):
            raise IndexOutOfRange(f"(u={fixed_a}, x={fixed_b}) outside ({U}, {X})")
        plane = lf.data[fixed_a, :, fixed_b, :]
    else:
        raise ValueError(f"unknown EPI orientation {orientation!r}")
    return EPI(orientation, plane)


def luma(arr: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB array with channels last; keeps a size-1 channel axis."""
    arr = np.asarray(arr)
    if arr.shape[-1] == 1:
        return arr
    if arr.shape[-1] != 3:
        raise ChannelMismatch(f"expected 3 channels, got {arr.shape[-1]}")
    return (arr @ LUMA_WEIGHTS.astype(arr.dtype))[..., None]


def rgb_to_luma(lf: LightField) -> LightField:
    if lf.C != 3:
        raise ChannelMismatch(f"rgb_to_luma needs C=3, got C={lf.C}")
    # the weights sum to 1, so rounding can only push a hair past the ends
    return LightField(np.clip(luma(lf.data), 0.0, 1.0), copy=False)


@dataclass(frozen=True)
class LfTransform:
    """Element of the dihedral group of the square acting on a light field.

    Flips are applied first, then ``rotate90`` quarter turns.  Every spatial
    operation is mirrored on the paired angular axes so the result is still
    a geometrically valid light field.
    """

    flip_x: bool = False
    flip_y: bool = False
    rotate90: int = 0

    def __post_init__(self):
        if self.rotate90 not in (0, 1, 2, 3):
            raise ValueError(f"rotate90 must be in 0..3, got {self.rotate90}")

    def matrix(self) -> np.ndarray:
        m = np.eye(2, dtype=int)
        if self.flip_x:
            m = np.diag([-1, 1]) @ m
        if self.flip_y:
            m = np.diag([1, -1]) @ m
        quarter = np.array([[0, -1], [1, 0]])
        for _ in range(self.rotate90):
            m = quarter @ m
        return m

    def then(self, other: "LfTransform") -> "LfTransform":
        """The transform equal to applying ``self`` and then ``other``."""
        target = other.matrix() @ self.matrix()
        for t in DIHEDRAL:
            if np.array_equal(t.matrix(), target):
                return t
        raise AssertionError("dihedral group not closed")  # pragma: no cover

    def inverse(self) -> "LfTransform":
        for t in DIHEDRAL:
            if self.then(t) == IDENTITY:
                return t
        raise AssertionError("no inverse found")  # pragma: no cover


IDENTITY = LfTransform()
# Each group element once; flip_y is redundant given flip_x and rotations.
DIHEDRAL = tuple(LfTransform(fx, False, k) for fx in (False, True) for k in range(4))


def apply_transform_array(arr: np.ndarray, t: LfTransform) -> np.ndarray:
    """Apply ``t`` to any array whose leading axes are ``[U, V, X, Y]``."""
    out = arr
    if t.flip_x:
        out = out[::-1, :, ::-1]
    if t.flip_y:
        out = out[:, ::-1, :, ::-1]
    if t.rotate90:
        out = np.rot90(out, t.rotate90, axes=(0, 1))
        out = np.rot90(out, t.rotate90, axes=(2, 3))
    return np.ascontiguousarray(out)


def apply_transform(lf: LightField, t: LfTransform) -> LightField:
    return LightField(apply_transform_array(lf.data, t), signed=lf.signed, copy=False)


def crop_patch(lf: LightField, x0: int, y0: int, w: int, h: int) -> LightField:
    """Crop the same ``w x h`` spatial window from every view."""
    X, Y = lf.shape[2:4]
    if x0 < 0 or y0 < 0 or w < 1 or h < 1 or x0 + w > X or y0 + h > Y:
        raise IndexOutOfRange(f"crop ({x0},{y0},{w},{h}) outside spatial grid {X}x{Y}")
    return LightField(lf.data[:, :, x0 : x0 + w, y0 : y0 + h], signed=lf.signed)
