"""SplitMix64 random streams.

The generator state is a single 64-bit counter advanced by the golden
gamma ``0x9E3779B97F4A7C15``; each output is the finalizer ``mix`` of the
advanced state.  Because output ``i`` depends only on ``state + i*gamma``,
blocks of outputs are produced in one vectorized numpy pass.

Stream splitting: ``split()`` consumes one output ``u`` of the parent and
returns a child seeded with ``mix(u ^ 0xD1B54A32D192ED03)``.  ``child(key)``
derives a named stream without advancing the parent: the key string is
hashed with FNV-1a 64 and the child seed is ``mix(state ^ hash)``.

Floats: ``(u >> 11) * 2**-53`` in [0, 1).  Normals: Box-Muller on pairs
of floats, using ``1 - u1`` so the log argument is never zero.
"""

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK = 0xFFFFFFFFFFFFFFFF
_SPLIT_SALT = 0xD1B54A32D192ED03

_GAMMA_U64 = np.uint64(GAMMA)


def mix64(z):
    """SplitMix64 finalizer on a Python int."""
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def _mix64_array(z):
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _fnv1a64(key):
    h = 0xCBF29CE484222325
    for byte in key.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK
    return h


class SplitMix64:
    """Seeded SplitMix64 stream with vectorized block draws."""

    def __init__(self, seed=0):
        seed = int(seed)
        if seed < 0 or seed > MASK:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.state = seed

    def next_u64(self):
        self.state = (self.state + GAMMA) & MASK
        return mix64(self.state)

    def u64(self, n):
        """Next ``n`` outputs as a uint64 array."""
        n = int(n)
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * _GAMMA_U64
            out = _mix64_array(states)
        self.state = (self.state + n * GAMMA) & MASK
        return out

    def random(self, n=None):
        if n is None:
            return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def uniform(self, lo, hi, n=None):
        return lo + (hi - lo) * self.random(n)

    def normal(self, n=None):
        m = 1 if n is None else int(n)
        pairs = (m + 1) // 2
        u = self.random(2 * pairs)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return float(z[0]) if n is None else z[:m]

    def integers(self, high):
        """Uniform integer in [0, high) by rejection (no modulo bias)."""
        high = int(high)
        if high <= 0:
            raise ValueError("high must be positive")
        limit = (1 << 64) - ((1 << 64) % high)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % high

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(int(n)))
        for i in range(len(perm) - 1, 0, -1):
            j = self.integers(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)

    def split(self):
        return SplitMix64(mix64(self.next_u64() ^ _SPLIT_SALT))

    def child(self, key):
        return SplitMix64(mix64(self.state ^ _fnv1a64(str(key))))


def as_stream(rng):
    """Coerce an int seed, None, or an existing stream to a SplitMix64."""
    if isinstance(rng, SplitMix64):
        return rng
    if rng is None:
        return SplitMix64(0)
    if isinstance(rng, (int, np.integer)):
        return SplitMix64(int(rng))
    raise TypeError(f"expected a seed or SplitMix64 stream, got {type(rng).__name__}")
