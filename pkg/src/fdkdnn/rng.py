"""Deterministic xorshift64* generator.

Every random decision in the pipeline (dataset splits, mini-batch order,
dropout masks, synthetic images, backbone weights) draws from this
generator, so results depend only on the seeds passed in.

Seeding: ``mix_seed(seed, *stream)`` folds each 64-bit word into a running
state with the splitmix64 finalizer, starting from the golden-ratio
constant. A zero result is replaced by ``_ZERO_STATE`` since xorshift has
a fixed point at zero.

Bulk draws (``uint64_array`` and friends) run ``_LANES`` independent
xorshift64* lanes in lock-step. Lane ``i`` is seeded with
``splitmix64(next_u64())`` drawn sequentially from the parent, and the
output is laid out step-major: element ``s * lanes + i`` is the ``s``-th
output of lane ``i``.
"""
from __future__ import annotations

from collections.abc import MutableSequence

import numpy as np

MASK64 = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D
_GOLDEN = 0x9E3779B97F4A7C15
_ZERO_STATE = 0x853C49E6748FEA9B
_LANES = 256


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(seed: int, *stream: int) -> int:
    """Fold a seed and optional stream identifiers into a nonzero 64-bit state."""
    h = _GOLDEN
    for word in (seed, *stream):
        h = splitmix64(h ^ (int(word) & MASK64))
    return h or _ZERO_STATE


class Xorshift64Star:
    """xorshift64* (shifts 12/25/27, multiplier 0x2545F4914F6CDD1D)."""

    def __init__(self, seed: int, *stream: int):
        self.state = mix_seed(seed, *stream)

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * _MULT) & MASK64

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) by multiply-high (bias below n / 2**64)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates shuffle, walking from the end."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        order = list(range(n))
        self.shuffle(order)
        return order

    def spawn(self, *stream: int) -> Xorshift64Star:
        """Child generator seeded from this one's next output."""
        return Xorshift64Star(self.next_u64(), *stream)

    def uint64_array(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        lanes = min(n, _LANES)
        seeds = [splitmix64(self.next_u64()) or _ZERO_STATE for _ in range(lanes)]
        state = np.array(seeds, dtype=np.uint64)
        steps = -(-n // lanes)
        out = np.empty((steps, lanes), dtype=np.uint64)
        s12, s25, s27 = np.uint64(12), np.uint64(25), np.uint64(27)
        mult = np.uint64(_MULT)
        for s in range(steps):
            state ^= state >> s12
            state ^= state << s25
            state ^= state >> s27
            np.multiply(state, mult, out=out[s])
        return out.reshape(-1)[:n]

    def uniform_array(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.uint64_array(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normal_array(self, n: int) -> np.ndarray:
        """``n`` standard normal doubles (Box-Muller, cosine branch only)."""
        u = self.uniform_array(2 * n)
        radius = np.sqrt(-2.0 * np.log1p(-u[:n]))
        return radius * np.cos(2.0 * np.pi * u[n:])
