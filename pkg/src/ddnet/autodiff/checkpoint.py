"""Flat binary parameter checkpoints.

Layout (little-endian): b"DDNT", u32 version, u32 count, then per parameter
u32 name length, UTF-8 name, u32 rank, rank x u64 dims, f64 data.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"DDNT"
VERSION = 1


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise DataError(f"{path}: truncated checkpoint at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise DataError(f"{path}: bad magic at byte 0")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version} at byte 4")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes at byte {pos}")
    return params
