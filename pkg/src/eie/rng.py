"""Seedable, splittable random streams built on numpy's Philox4x64 generator.

Philox is counter-based: the stream is fully described by a 128-bit key and a
256-bit counter, so any stream can be reproduced on another platform from the
same (seed, name path). A child stream's key is the first 16 bytes of
``blake2b(parent_key || name)``; the root key is ``blake2b(seed as u64 LE)``.
Streams are therefore independent of the order in which children are created.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Any

import numpy as np


def _key_from_bytes(raw: bytes) -> np.ndarray:
    digest = hashlib.blake2b(raw, digest_size=16).digest()
    return np.frombuffer(digest, dtype="<u8").astype(np.uint64)


class Rng:
    """A named Philox stream. ``child(name)`` derives an independent sub-stream."""

    def __init__(self, seed: int = 0, *, _key: np.ndarray | None = None, path: str = ""):
        if _key is None:
            if seed < 0 or seed >= 2**64:
                raise ValueError(f"seed must be a u64, got {seed}")
            _key = _key_from_bytes(struct.pack("<Q", seed))
        self.key = _key
        self.path = path
        self.gen = np.random.Generator(np.random.Philox(key=self.key))

    def child(self, name: str) -> "Rng":
        raw = self.key.astype("<u8").tobytes() + name.encode("utf-8")
        path = f"{self.path}/{name}" if self.path else name
        return Rng(_key=_key_from_bytes(raw), path=path)

    # thin wrappers so call sites never reach for the global numpy RNG
    def uniform(self) -> float:
        return float(self.gen.random())

    def random(self, size=None) -> np.ndarray:
        return self.gen.random(size)

    def integers(self, low: int, high: int, size=None):
        return self.gen.integers(low, high, size=size)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, size=size)

    def choice(self, n: int, size=None, replace: bool = True):
        return self.gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def get_state(self) -> dict[str, Any]:
        """JSON-serialisable snapshot of key, counter and buffered output."""
        st = self.gen.bit_generator.state
        inner = st["state"]
        return {
            "path": self.path,
            "key": [int(x) for x in inner["key"]],
            "counter": [int(x) for x in inner["counter"]],
            "buffer": [int(x) for x in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state: dict[str, Any]) -> None:
        key = np.array(state["key"], dtype=np.uint64)
        if not np.array_equal(key, self.key):
            raise ValueError(f"RNG state for stream {state.get('path')!r} does not match key of {self.path!r}")
        self.gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": key,
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }

    def __repr__(self) -> str:
        return f"Rng(path={self.path!r})"
