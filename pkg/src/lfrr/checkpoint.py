"""Checkpoint container.

Layout (little-endian): magic ``b"LFCK"``, uint32 version, uint32 length of
a UTF-8 config block (the resolved ``key=value`` text), the config block,
uint32 parameter count, then per parameter: uint16 name length, name,
uint8 rank, rank x uint32 dims, float64 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig, format_config, parse_config
from .errors import BadMagic, BadVersion, TruncatedFile

MAGIC = b"LFCK"
VERSION = 1


def encode_checkpoint(params: dict, cfg: TrainConfig) -> bytes:
    text = format_config(cfg).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(text)), text, struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f8")
        raw = name.encode()
        out.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"checkpoint ends at byte {len(self.buf)}, needed {self.pos + n}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], TrainConfig]:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagic("not an lfrr checkpoint")
    version, text_len = r.unpack("<II")
    if version != VERSION:
        raise BadVersion(f"unsupported checkpoint version {version}")
    cfg = parse_config(r.take(text_len).decode())
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        name_len, ndim = r.unpack("<HB")
        name = r.take(name_len).decode()
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    return params, cfg


def save_checkpoint(path, params: dict, cfg: TrainConfig) -> None:
    Path(path).write_bytes(encode_checkpoint(params, cfg))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], TrainConfig]:
    return decode_checkpoint(Path(path).read_bytes())
