"""Reproducible random streams built on the Philox counter-based generator.

Every stochastic routine in this package receives an :class:`RngStream`
rather than a bare seed, so results are bit-identical across runs,
platforms, and worker layouts. Philox (4x64) is keyed directly with the
(seed, stream) pair; substreams are derived by hashing the stream id with
a splitmix64 finalizer, which lets any worker rebuild its stream from the
root seed and a path of child indices alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix64(stream: int, index: int) -> int:
    """Hash a (stream, index) pair to a fresh 64-bit stream id."""
    z = (stream ^ (index * 0x9E3779B97F4A7C15)) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RngStream:
    """Address of one independent random stream.

    The same (seed, stream) pair always reproduces the same draws;
    distinct stream ids give statistically independent streams.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        """Substream `index`, independent of this stream and of its siblings."""
        return RngStream(self.seed, _mix64(self.stream, index))
