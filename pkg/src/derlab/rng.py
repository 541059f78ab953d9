"""Counter-based SplitMix64 stream with Box-Muller normals.

Draw ``i`` of a stream seeded with ``s`` is ``mix(s + (i + 1) * 0x9E3779B97F4A7C15)``
where ``mix`` is the SplitMix64 finalizer::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

all modulo 2**64. Uniforms take the top 53 bits: ``(z >> 11) * 2**-53`` in
[0, 1). Normals use the basic Box-Muller transform on consecutive pairs
``(u1, u2)``: ``sqrt(-2 log(1 - u1)) * cos(2 pi u2)``, one normal per pair.
Everything is integer arithmetic plus IEEE-754 libm calls, so streams are
reproducible across platforms.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _MUL1
    z = (z ^ (z >> np.uint64(27))) * _MUL2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed, *labels):
    """Deterministic child seed from a parent seed and integer labels."""
    with np.errstate(over="ignore"):
        z = _mix(np.array([seed & _MASK64], dtype=np.uint64) + _GOLDEN)
        for label in labels:
            # z is mixed before each label is added, so swapped or xor-equal pairs stay apart
            z = _mix(z + np.uint64(label & _MASK64) * _GOLDEN + _GOLDEN)
    return int(z[0])


class SplitMix64:
    """Stateful view over the counter-based stream; ``counter`` draws consumed so far."""

    def __init__(self, seed):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def raw(self, n):
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * _GOLDEN
            return _mix(z)

    def uniform(self, n, low=0.0, high=1.0):
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def normal(self, n, loc=0.0, scale=1.0):
        pairs = self.uniform(2 * n).reshape(n, 2)
        radius = np.sqrt(-2.0 * np.log1p(-pairs[:, 0]))
        return loc + scale * radius * np.cos(2.0 * np.pi * pairs[:, 1])
