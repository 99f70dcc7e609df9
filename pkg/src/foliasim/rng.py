"""Seeded random streams with order-independent substreams.

A stream is keyed by ``mix64(master_seed, stream_index)``, the splitmix64
finalizer applied to ``master_seed + GOLDEN * (stream_index + 1)`` (mod 2^64).
The key seeds a Philox4x64 counter-based generator; Gaussians come from numpy's
ziggurat sampler (``Generator.standard_normal``). ``substream(j)`` derives a new
key from the parent key, never from the parent's consumed state, so work split
over paths gives the same numbers under any scheduling.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(seed: int, index: int) -> int:
    z = (int(seed) + GOLDEN * (int(index) + 1)) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class RandomStream:
    def __init__(self, master_seed: int, stream_index: int = 0):
        self.master_seed = int(master_seed) & MASK64
        self.stream_index = int(stream_index) & MASK64
        self.key = mix64(self.master_seed, self.stream_index)
        self._gen = np.random.Generator(np.random.Philox(key=self.key))

    def substream(self, j: int) -> RandomStream:
        return RandomStream(self.key, j)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def __repr__(self) -> str:
        return f"RandomStream(master_seed={self.master_seed}, stream_index={self.stream_index})"
