"""Reader/writer for the ``.eiet`` binary tensor format.

Layout (little-endian, no padding)::

    b"EIET" | version:u8 (=1) | rank:u8 | rank x dim:u32 | prod(dims) x f32
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"EIET"
VERSION = 1


class EietFormatError(ValueError):
    pass


def encode(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim > 255:
        raise EietFormatError(f"rank {arr.ndim} does not fit in a u8")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise EietFormatError(f"{source}: bad magic")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != VERSION:
        raise EietFormatError(f"{source}: unsupported version {version}")
    off = 6
    if len(raw) < off + 4 * rank:
        raise EietFormatError(f"{source}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    n = int(np.prod(dims, dtype=np.int64))
    if len(raw) - off != 4 * n:
        raise EietFormatError(f"{source}: expected {4 * n} data bytes for shape {dims}, found {len(raw) - off}")
    return np.frombuffer(raw, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(dims)


def save(path: str | os.PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), str(path))
