"""Counter-based, splittable random streams.

A stream is keyed by ``(seed, stream_id)`` and backed by numpy's Philox
generator, so draws depend only on the key and how many values were consumed,
never on which process or in what order sibling streams ran.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _hash64(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


class RngStream:
    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self.gen = np.random.Generator(self._bitgen)

    @property
    def counter(self) -> int:
        c = self._bitgen.state["state"]["counter"]
        return int(c[0]) | (int(c[1]) << 64)

    def child(self, name) -> "RngStream":
        """Independent stream derived from this one's key and ``name``."""
        return RngStream(self.seed, _hash64(self.stream_id, name))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    # thin delegation to the numpy generator
    def random(self, shape=None) -> np.ndarray:
        return self.gen.random(shape)

    def uniform(self, low=0.0, high=1.0, shape=None):
        return self.gen.uniform(low, high, shape)

    def normal(self, loc=0.0, scale=1.0, shape=None):
        return self.gen.normal(loc, scale, shape)

    def integers(self, low, high=None, shape=None):
        return self.gen.integers(low, high, shape)

    def permutation(self, n):
        return self.gen.permutation(n)

    def beta(self, a, b, shape=None):
        return self.gen.beta(a, b, shape)
