"""SplitMix64 random streams.

Every random draw in the simulator goes through :class:`SplitMix64` so the
object-level protocol model and both trial kernels consume identical streams
and can be compared trial by trial.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer (all arithmetic mod 2**64)."""
    z &= MASK64
    z ^= z >> 30
    z = (z * _MUL1) & MASK64
    z ^= z >> 27
    z = (z * _MUL2) & MASK64
    return z ^ (z >> 31)


def trial_seed(master_seed: int, trial_index: int) -> int:
    return mix64((master_seed ^ trial_index) & MASK64)


class SplitMix64:
    """Minimal 64-bit generator with the draw primitives the simulator needs."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def bit(self) -> int:
        return self.next_u64() >> 63

    def randbelow(self, n: int) -> int:
        """Unbiased integer in ``[0, n)`` by rejection; ``n == 1`` draws nothing."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        if n == 1:
            return 0
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    @classmethod
    def for_trial(cls, master_seed: int, trial_index: int) -> "SplitMix64":
        return cls(trial_seed(master_seed, trial_index))


def sample_subset(n: int, r: int, rng: SplitMix64) -> list[int]:
    """Uniform ``r``-subset of ``range(n)`` in increasing order (selection sampling).

    Consumes one ``randbelow`` per undecided index; stops drawing as soon as
    the remainder is forced either way.
    """
    if not 0 <= r <= n:
        raise ValueError(f"cannot choose {r} of {n}")
    chosen: list[int] = []
    need = r
    for i in range(n):
        if need == 0:
            break
        left = n - i
        if need == left:
            chosen.extend(range(i, n))
            break
        if rng.randbelow(left) < need:
            chosen.append(i)
            need -= 1
    return chosen
