"""
SplitMix64 Parameter Generator
==============================
Deterministic stream used for every seeded weight, signature and noise value.

Output n of a stream started at `seed` is mix(seed + n * GOLDEN), n = 1, 2, ...
so any block of draws can be produced at once with uint64 array arithmetic.
Uniform reals take the top 53 bits: u = (x >> 11) * 2**-53, u in [0, 1).
"""

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Stateful SplitMix64 stream; each draw advances the state"""

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64

    @property
    def state(self) -> int:
        return self._state

    def next_uint64(self, n: int) -> np.ndarray:
        """Draw n raw 64-bit outputs"""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + steps * np.uint64(GOLDEN_GAMMA)
            out = _mix(z)
        self._state = (self._state + n * GOLDEN_GAMMA) & _MASK64
        return out

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Draw n reals uniform in [low, high)"""
        raw = self.next_uint64(n)
        unit = (raw >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return low + (high - low) * unit

    def fork(self, tag: int) -> "SplitMix64":
        """Independent child stream keyed by an integer tag"""
        mixed = _mix(np.array([(self._state ^ (int(tag) * GOLDEN_GAMMA)) & _MASK64], dtype=np.uint64))
        return SplitMix64(int(mixed[0]))


def derive_seed(seed: int, tag: int) -> int:
    """Sub-seed for one parameter family"""
    return SplitMix64(seed).fork(tag).state
