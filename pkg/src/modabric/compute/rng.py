"""Seeded, splittable random streams.

All randomness derives from one integer seed. A named sub-stream is a
PCG64 generator whose :class:`numpy.random.SeedSequence` has the root seed
as entropy and the CRC-32 of each key as its spawn key, so
``RngState(7).stream("train", 3)`` is the same stream in every process and
independent of how many other streams were drawn before it.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


@dataclass(frozen=True)
class RngState:
    seed: int
    algorithm: str = "PCG64"

    def stream(self, *keys) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed & 0xFFFFFFFFFFFFFFFF,
                                    spawn_key=tuple(_key(k) for k in keys))
        return np.random.Generator(np.random.PCG64(ss))

    def child_seed(self, *keys) -> int:
        """A 63-bit integer seed for a sub-component (e.g. one of several runs)."""
        return int(self.stream("seed", *keys).integers(0, 2**63 - 1))
