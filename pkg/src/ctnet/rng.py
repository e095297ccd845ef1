"""Portable seeded random numbers.

All randomness in ctnet comes from :class:`Rng`, a SplitMix64 generator.
SplitMix64 is counter based: output ``k`` (1-based) is
``mix(seed + k * 0x9E3779B97F4A7C15 mod 2**64)`` with the standard
Stafford "variant 13" finalizer, so draws can be vectorized with numpy
uint64 arithmetic and reproduce bit-for-bit on any platform.

Derived quantities:

* floats in [0, 1): top 53 bits of an output times 2**-53
* integers in [0, n): ``floor(u * n)`` with ``u`` the float above
* normals: Box-Muller on pairs of floats
"""
from __future__ import annotations

import hashlib

import numpy as np

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def hash64(*parts) -> int:
    """Stable 64-bit hash of ints/strings, used to derive per-case seeds."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, int):
            h.update(b"i" + (p & _MASK64).to_bytes(8, "little"))
        else:
            b = str(p).encode("utf-8")
            h.update(b"s" + len(b).to_bytes(4, "little") + b)
    return int.from_bytes(h.digest(), "little")


class Rng:
    """SplitMix64 stream. ``Rng(seed)`` always yields the same sequence."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + k * GOLDEN_GAMMA)

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low, high, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def integers(self, high: int, size=None):
        """Integers uniform over [0, high)."""
        if high < 1:
            raise ValueError("high must be >= 1")
        u = self.random(size)
        out = np.minimum(np.floor(np.asarray(u) * high), high - 1).astype(np.int64)
        return int(out) if size is None else out

    def normal(self, size) -> np.ndarray:
        n = int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)  # (0, 1], keeps log finite
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.random(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
