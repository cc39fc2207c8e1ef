"""Named random substreams derived from one master seed.

Each consumer (data generation, partitioning, sampling, shuffling, DP noise,
init, k-means) asks for its own stream keyed by a purpose tag plus integer
coordinates such as the round and client id. Turning one mechanism on or off
therefore never shifts the draws seen by another.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(master: int, tag: str, *keys: int) -> np.random.Generator:
    entropy = [int(master) & _MASK64, zlib.crc32(tag.encode("utf-8"))]
    entropy.extend(int(k) & _MASK64 for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))


class Streams:
    """Factory for substreams of a fixed master seed."""

    def __init__(self, master: int):
        self.master = int(master)

    def __call__(self, tag: str, *keys: int) -> np.random.Generator:
        return substream(self.master, tag, *keys)

    def __repr__(self) -> str:
        return f"Streams(master={self.master})"
