"""Deterministic random primitives shared by synthesis, init, and attacks.

A single SplitMix64 stream backs every reproducible draw in the package so
that corpora, model weights, and perturbations can be regenerated bit for
bit from integer seeds. Gaussian draws use Box-Muller and consume exactly
two uniforms each, which keeps stream positions predictable.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TINY = 2.0**-53  # smallest uniform above zero; also the Box-Muller guard
_TWO_PI = 2.0 * np.pi


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; derives seeds from command strings."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


class Rng:
    """SplitMix64 generator with uniform and Gaussian helpers.

    The state advances by the golden-gamma increment once per 64-bit
    output; the finalizer matches the published mix function exactly.
    Vectorised draws produce the same sequence as repeated scalar calls.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        x = self.state
        x ^= x >> 30
        x = (x * _MIX1) & _MASK64
        x ^= x >> 27
        x = (x * _MIX2) & _MASK64
        x ^= x >> 31
        return x

    def next_below(self, bound: int) -> int:
        """Integer in [0, bound) as next_u64() mod bound."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def _raw(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.empty(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        x = np.uint64(self.state) + steps
        self.state = int(x[-1])
        x ^= x >> np.uint64(30)
        x *= np.uint64(_MIX1)
        x ^= x >> np.uint64(27)
        x *= np.uint64(_MIX2)
        x ^= x >> np.uint64(31)
        return x

    def uniform(self, n: int) -> np.ndarray:
        """n i.i.d. uniforms in [0, 1), each (bits >> 11) * 2**-53."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * _TINY

    def normal(self, n: int) -> np.ndarray:
        """n i.i.d. standard normals; draw i consumes uniforms 2i, 2i+1."""
        u = self.uniform(2 * n)
        u1 = np.maximum(u[0::2], _TINY)
        u2 = u[1::2]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
