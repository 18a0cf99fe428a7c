"""Deterministic random primitives: a splitmix64 stream with Box-Muller gaussians.

Everything downstream that needs randomness (synthetic data, per-party seeds)
draws from this module so that runs are reproducible bit-for-bit across
processes and implementations.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """splitmix64 sequence generator (64-bit state, 64-bit outputs)."""

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_gaussian(self) -> float:
        """One standard normal draw via Box-Muller (cosine branch).

        Consumes exactly two 64-bit outputs per call; u1 is shifted into
        (0, 1] so the logarithm is always finite.
        """
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
        u2 = (self.next_u64() >> 11) * 2.0**-53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def splitmix64(x: int) -> int:
    """First output of a splitmix64 stream seeded with x (a one-shot mix)."""
    return SplitMix64(x).next_u64()
