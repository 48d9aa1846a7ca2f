"""Named, counter-addressed random streams derived from one root seed.

Every stream is a pure function of ``(root_seed, name, *counters)`` so the
draws of one stream never depend on how many draws another stream consumed,
or on the order in which streams were requested.
"""
from __future__ import annotations

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_stream(root_seed: int, name: str, *counters: int) -> np.random.Generator:
    key = (_name_key(name),) + tuple(int(c) for c in counters)
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


class StreamRegistry:
    """Factory for independent generators keyed by name and integer counters."""

    def __init__(self, root_seed: int):
        if int(root_seed) < 0:
            raise ValueError("root seed must be non-negative")
        self.root_seed = int(root_seed)

    def stream(self, name: str, *counters: int) -> np.random.Generator:
        return derive_stream(self.root_seed, name, *counters)

    def __repr__(self):
        return f"StreamRegistry(root_seed={self.root_seed})"
