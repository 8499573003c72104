"""Portable pseudo-random numbers: xoshiro256** seeded through splitmix64.

Every random draw in the package goes through :class:`Rng` so that a run is
reproducible bit-for-bit on any platform.  Streams for independent purposes
(initialization, minibatches, exploration) are derived with :func:`derive_seed`
rather than by sharing one generator.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *labels) -> int:
    """Mix ``seed`` with a sequence of labels (ints or strings) into a new 64-bit seed."""
    state = seed & MASK64
    state, out = splitmix64(state)
    for label in labels:
        if isinstance(label, str):
            label = zlib.crc32(label.encode("utf-8"))
        state, out = splitmix64(state ^ (int(label) & MASK64))
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    """xoshiro256** generator with a small numpy-flavoured convenience API."""

    __slots__ = ("_s", "seed")

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        if not any(s):  # all-zero state is a fixed point
            s[0] = 1
        self._s = s

    def spawn(self, *labels) -> "Rng":
        return Rng(derive_seed(self.seed, *labels))

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        if size is None:
            return low + (high - low) * self.random()
        n = int(np.prod(size))
        out = np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)
        return (low + (high - low) * out).reshape(size)

    def normal(self, size=None):
        """Standard normal draws (Box-Muller, both outputs used)."""
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(n)
        i = 0
        while i < n:
            u1 = 1.0 - self.random()  # (0, 1]
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < n:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
            i += 2
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, n: int, size: int) -> np.ndarray:
        return np.array([self.integer(n) for _ in range(size)], dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)`` (partial Fisher-Yates)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.integer(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return np.array(pool[:k], dtype=np.int64)

    def choice(self, probs) -> int:
        """Index drawn from a discrete distribution given by ``probs``."""
        u = self.random()
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                return i
        # rounding can leave acc slightly below 1
        return max(i for i, p in enumerate(probs) if p > 0)
