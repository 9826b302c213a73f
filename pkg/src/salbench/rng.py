"""Deterministic random number generation.

Every stochastic component of the harness (weight init, shuffling, noise,
attack restarts, data synthesis) draws from SplitMix64 streams derived from
a user seed plus a label.  The generator is fully specified here so that an
independent implementation can reproduce any draw bit for bit:

    state_{i+1} = (state_i + 0x9E3779B97F4A7C15) mod 2^64
    z = state_{i+1}
    z = ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    output_i = z XOR (z >> 31)

Uniform doubles in [0, 1) take the top 53 bits: (output >> 11) * 2^-53.
Normal deviates use the Box-Muller transform on consecutive uniform pairs,
with the first uniform shifted into (0, 1] as ((output >> 11) + 1) * 2^-53.
Stream derivation hashes each label with FNV-1a (64-bit) and mixes it into
the seed through one SplitMix64 output step per label.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_TWO53 = float(1 << 53)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _fnv1a(label: str) -> int:
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


class SplitMix64:
    """Counter-based 64-bit generator; cheap to fork and to vectorize."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (self.next_u64() >> 11) / _TWO53

    def normal(self) -> float:
        """One standard normal deviate (Box-Muller, cosine branch)."""
        u1 = ((self.next_u64() >> 11) + 1) / _TWO53
        u2 = (self.next_u64() >> 11) / _TWO53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def _bulk_u64(self, n: int) -> np.ndarray:
        # SplitMix64 is counter-based: outputs are a pure function of the
        # state sequence, so n draws vectorize over uint64 arithmetic.
        start = self._state
        self._state = (self._state + n * _GAMMA) & _MASK
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(start) + idx * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform_array(self, shape) -> np.ndarray:
        """Array of doubles in [0, 1), row-major draw order."""
        n = int(np.prod(shape)) if not isinstance(shape, int) else shape
        out = (self._bulk_u64(n) >> np.uint64(11)).astype(np.float64) / _TWO53
        return out.reshape(shape)

    def normal_array(self, shape) -> np.ndarray:
        """Array of standard normals; consumes two uniforms per element."""
        n = int(np.prod(shape)) if not isinstance(shape, int) else shape
        raw = self._bulk_u64(2 * n)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) / _TWO53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) / _TWO53
        out = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return out.reshape(shape)


def derive(seed: int, *labels) -> SplitMix64:
    """Build an independent stream from a base seed and label path.

    String labels are FNV-1a hashed; integer labels are used as-is.  Each
    label advances a SplitMix64 sequence seeded by the running state, so
    distinct label paths yield decorrelated streams.
    """
    state = _mix((seed & _MASK) ^ _GAMMA)
    for label in labels:
        if isinstance(label, str):
            value = _fnv1a(label)
        else:
            value = int(label) & _MASK
        state = _mix((state + _GAMMA + value) & _MASK)
    return SplitMix64(state)
