"""Deterministic pseudo-random numbers for every stochastic step.

The engine never touches global RNG state. All shuffles, splits, weight
initialisations, and synthetic draws go through :class:`Xorshift64Star`,
a 64-bit xorshift generator with a multiplicative output scramble. The
generator is tiny on purpose: a sibling tool in another language can
reproduce byte-identical splits from the reference description below.

Algorithm
---------
State seeding (any 64-bit seed, including 0) runs one splitmix64 step::

    z = (seed + 0x9E3779B97F4A7C15) mod 2^64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    state = z ^ (z >> 31)        # replaced by 0x9E3779B97F4A7C15 if zero

Each draw updates the state and scrambles the output::

    x ^= x >> 12;  x ^= (x << 25) mod 2^64;  x ^= x >> 27
    output = (x * 0x2545F4914F6CDD1D) mod 2^64

Reference sequence, seed 42, first five outputs of next_u64():

    3580622183945639842
    10378725325292465923
    8967075514996744559
    5001014893397904463
    14825054885549601002

Derived draws are defined in terms of next_u64():

* ``uniform()``   -> (next_u64() >> 11) * 2**-53, in [0, 1)
* ``below(n)``    -> rejection sampling: draw u until u < 2**64 - (2**64 % n),
  return u % n (unbiased)
* ``normal()``    -> Box-Muller on two uniforms; the second variate of each
  pair is cached and returned by the following call
* ``shuffle(xs)`` -> Fisher-Yates, i from len-1 down to 1, j = below(i + 1)
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Xorshift64Star:
    """Seeded 64-bit xorshift* generator; the engine's only randomness source."""

    def __init__(self, seed: int):
        z = (int(seed) + _GOLDEN) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self._state = z if z != 0 else _GOLDEN
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self) -> float:
        """Uniform float64 in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def normal(self) -> float:
        """Standard normal draw (Box-Muller, pairs cached)."""
        if self._spare_normal is not None:
            value, self._spare_normal = self._spare_normal, None
            return value
        u1 = self.uniform()
        while u1 <= 0.0:
            u1 = self.uniform()
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = radius * math.sin(theta)
        return radius * math.cos(theta)

    def normals(self, shape: int | tuple[int, ...]) -> np.ndarray:
        """Array of standard normal draws, filled in C order."""
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.normal()
        return out.reshape(shape)

    def uniforms(self, shape: int | tuple[int, ...]) -> np.ndarray:
        """Array of uniform [0, 1) draws, filled in C order."""
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.uniform()
        return out.reshape(shape)

    def shuffle(self, xs) -> None:
        """In-place Fisher-Yates shuffle of a mutable sequence or 1-d array."""
        for i in range(len(xs) - 1, 0, -1):
            j = self.below(i + 1)
            xs[i], xs[j] = xs[j], xs[i]

    def permutation(self, n: int) -> np.ndarray:
        """Shuffled arange(n) as int64."""
        idx = np.arange(n, dtype=np.int64)
        self.shuffle(idx)
        return idx

    def choice(self, n: int, size: int) -> np.ndarray:
        """`size` indices drawn uniformly from [0, n) with replacement."""
        out = np.empty(size, dtype=np.int64)
        for i in range(size):
            out[i] = self.below(n)
        return out
