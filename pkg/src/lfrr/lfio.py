"""LFD binary files and PNG view mosaics.

LFD layout (little-endian)::

    offset  size  field
    0       4     magic b"LFD1"
    4       1     dtype code (0 = float32, 1 = float64)
    5       1     channel count C
    6       2     reserved, 0
    8       16    U, V, X, Y as uint32
    24      ...   U*V*X*Y*C values in u, v, x, y, c order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, BadVersion, DimensionOverflow, TruncatedFile, ValueOutOfRange
from .lightfield import LightField

MAGIC = b"LFD1"
HEADER = struct.Struct("<4sBBHIIII")
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
# Refuse payloads beyond 16 GiB; a corrupt header should not trigger a huge allocation.
MAX_PAYLOAD_BYTES = 1 << 34


def encode_lfd(lf: LightField, dtype: str = "f64") -> bytes:
    code = {"f32": 0, "f64": 1}[dtype]
    U, V, X, Y, C = lf.shape
    if C > 255:
        raise DimensionOverflow(f"channel count {C} does not fit in one byte")
    if max(U, V, X, Y) >= 1 << 32:
        raise DimensionOverflow("dimension does not fit in uint32")
    header = HEADER.pack(MAGIC, code, C, 0, U, V, X, Y)
    return header + np.ascontiguousarray(lf.data, dtype=DTYPE_CODES[code]).tobytes()


def decode_lfd(buf: bytes, signed: bool = False) -> LightField:
    if len(buf) < 4:
        raise TruncatedFile(f"file has {len(buf)} bytes, header needs {HEADER.size}")
    if buf[:3] != MAGIC[:3]:
        raise BadMagic(f"bad magic {bytes(buf[:4])!r}")
    if buf[:4] != MAGIC:
        raise BadVersion(f"unsupported LFD version {bytes(buf[3:4])!r}")
    if len(buf) < HEADER.size:
        raise TruncatedFile(f"file has {len(buf)} bytes, header needs {HEADER.size}")
    _, code, C, _reserved, U, V, X, Y = HEADER.unpack_from(buf)
    if code not in DTYPE_CODES:
        raise BadVersion(f"unknown dtype code {code}")
    dtype = DTYPE_CODES[code]
    count = U * V * X * Y * C
    if count == 0:
        raise DimensionOverflow(f"zero-sized light field {(U, V, X, Y, C)}")
    nbytes = count * dtype.itemsize
    if nbytes > MAX_PAYLOAD_BYTES:
        raise DimensionOverflow(f"payload of {nbytes} bytes exceeds limit")
    if len(buf) < HEADER.size + nbytes:
        raise TruncatedFile(f"payload needs {nbytes} bytes, found {len(buf) - HEADER.size}")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=HEADER.size)
    data = data.astype(dtype.newbyteorder("="), copy=True).reshape(U, V, X, Y, C)
    return LightField(data, signed=signed, copy=False)


def write_lfd(path, lf: LightField, dtype: str = "f64") -> None:
    Path(path).write_bytes(encode_lfd(lf, dtype))


def read_lfd(path, signed: bool = False) -> LightField:
    return decode_lfd(Path(path).read_bytes(), signed=signed)


def to_mosaic(arr: np.ndarray) -> np.ndarray:
    """Tile ``[U, V, X, Y, C]`` views into a ``[U*X, V*Y, C]`` image, u by row."""
    U, V, X, Y, C = arr.shape
    return arr.transpose(0, 2, 1, 3, 4).reshape(U * X, V * Y, C)


def from_mosaic(img: np.ndarray, U: int, V: int) -> np.ndarray:
    H, W, C = img.shape
    if H % U or W % V:
        raise ValueOutOfRange(f"mosaic {H}x{W} does not tile into {U}x{V} views")
    return img.reshape(U, H // U, V, W // V, C).transpose(0, 2, 1, 3, 4)


def quantize8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image

    q = quantize8(img)
    if q.shape[-1] == 1:
        Image.fromarray(q[..., 0], mode="L").save(path)
    else:
        Image.fromarray(q, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 2:
        arr = arr[..., None]
    elif arr.shape[-1] == 4:
        arr = arr[..., :3]
    return arr.astype(np.float64) / 255.0


def write_mosaic_png(path, lf) -> None:
    arr = lf.data if isinstance(lf, LightField) else np.asarray(lf)
    write_png(path, to_mosaic(arr))


def read_mosaic_png(path, U: int, V: int) -> LightField:
    return LightField(from_mosaic(read_png(path), U, V))
