"""Counter-based 64-bit pseudo-random stream (SplitMix64 mixing).

Each draw hashes (seed, counter) through the SplitMix64 finalizer, so a
stream is a pure function of its seed and is reproducible across
languages and machines.  The counter-based form exists so whole blocks
of values can be generated with vectorized integer arithmetic.
"""

import numpy as np

__all__ = ["SeededStream", "splitmix64"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x):
    """SplitMix64 finalizer on uint64 scalars or arrays (wrapping)."""
    z = np.asarray(x, dtype=np.uint64) + _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SeededStream:
    """Deterministic uniform stream over [0, 1)."""

    def __init__(self, seed):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def uniform(self, shape=()):
        n = int(np.prod(shape)) if shape else 1
        counters = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        bits = splitmix64(splitmix64(counters) ^ self._seed)
        vals = (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return vals.reshape(shape) if shape else float(vals[0])

    def integers(self, low, high, shape=()):
        """Uniform integers in [low, high)."""
        span = high - low
        u = self.uniform(shape if shape else (1,))
        out = (np.floor(u * span) + low).astype(np.int64)
        return out.reshape(shape) if shape else int(out[0])

    def shuffle_indices(self, n):
        """Deterministic permutation of range(n) via random sort keys."""
        keys = self.uniform((n,))
        return np.argsort(keys, kind="stable")
