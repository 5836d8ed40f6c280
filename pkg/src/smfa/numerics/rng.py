"""Deterministic seeded random number generation.

The generator is xoshiro256** (Blackman & Vigna) with its state seeded by
SplitMix64, exactly as the reference implementations describe.  The
algorithm is fixed here, in pure Python integer arithmetic, so that a
given seed yields the same stream on every platform and library version:
golden test values stay portable.

Derived streams: sub-systems never share a raw stream.  They derive child
seeds with :func:`derive_seed`, which mixes the root seed with an FNV-1a
hash of a tag path, so adding a new consumer never perturbs existing
streams.

Variate recipes (all documented because golden tests depend on them):

* ``uniform``   -- 53 high bits of the next word, scaled into [0, 1).
* ``normal``    -- Box-Muller on two uniforms; the second variate of each
  pair is cached and returned by the following call.
* ``randint``   -- unbiased rejection sampling on the top of the 64-bit
  range (no modulo bias).
* ``shuffle``   -- Fisher-Yates driven by ``randint``.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def derive_seed(root: int, *tags: int | str) -> int:
    """Derive a child seed from a root seed and a tag path.

    Tags are hashed with 64-bit FNV-1a over their UTF-8 (strings) or
    decimal (integers) representation, then mixed into the root with one
    SplitMix64 output step per tag.
    """
    seed = root & _MASK64
    for tag in tags:
        h = 0xCBF29CE484222325
        for byte in str(tag).encode("utf-8"):
            h = ((h ^ byte) * 0x100000001B3) & _MASK64
        _, seed = _splitmix64(seed ^ h)
    return seed


class SeededRng:
    """Deterministic xoshiro256** stream with uniform/normal/int draws."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, word = _splitmix64(state)
            s.append(word)
        if not any(s):  # all-zero state is the one forbidden xoshiro state
            s[0] = 1
        self._s = s
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) built from the 53 high bits."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Standard normal via Box-Muller; one spare variate is cached."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
        else:
            # 1 - uniform() lies in (0, 1], keeping the log argument nonzero.
            u1 = 1.0 - self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            theta = 2.0 * math.pi * u2
            z = r * math.cos(theta)
            self._spare_normal = r * math.sin(theta)
        return mean + std * z

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection on the 64-bit range."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def normal_array(self, shape: tuple[int, ...], std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.normal(0.0, std)
        return out.reshape(shape)

    def uniform_array(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.uniform()
        return out.reshape(shape)
