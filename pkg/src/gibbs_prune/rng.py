"""Seeded, splittable random streams.

Every consumer of randomness derives its own substream from a root seed and a
key path, so the order in which layers or steps are processed never changes
the numbers any of them see.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("substream keys must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


@dataclass(frozen=True)
class RandomSource:
    seed: int
    key: tuple = ()

    def child(self, *parts) -> "RandomSource":
        """Derive a substream; the same parts always give the same stream."""
        return RandomSource(self.seed, self.key + tuple(_key_int(p) for p in parts))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RandomSource):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RandomSource(int(rng)).generator()
