"""Photons, bases, entangled-pair bookkeeping and multi-photon emission.

Entanglement is tracked with an explicit per-pair registry instead of state
vectors: a pair is either unmeasured or collapsed to a (basis, bit) value, which
is all the same-basis correlation of the Phi+ state requires.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .rng import SplitMix64


class QChannelError(Exception):
    pass


class AlreadyConsumed(QChannelError):
    pass


class InsufficientPhotons(QChannelError):
    pass


class Basis(enum.IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1

    def conjugate(self) -> "Basis":
        return Basis(1 - self)

    @property
    def symbol(self) -> str:
        return "+" if self is Basis.RECTILINEAR else "x"


class SignalKind(enum.IntEnum):
    KEY = 0
    TAMPER = 1


class PairRegistry:
    """Shared collapse state for the entangled pairs of one round.

    ``entries[pair_id]`` is ``None`` while the pair is unmeasured and a
    ``(Basis, bit)`` tuple once either half has been measured.
    """

    def __init__(self) -> None:
        self.entries: dict[int, tuple[Basis, int] | None] = {}

    def new_pair(self) -> int:
        pair_id = len(self.entries)
        self.entries[pair_id] = None
        return pair_id

    def state(self, pair_id: int) -> tuple[Basis, int] | None:
        return self.entries[pair_id]

    def collapse(self, pair_id: int, basis: Basis, bit: int) -> None:
        if self.entries[pair_id] is not None:
            raise QChannelError(f"pair {pair_id} already collapsed")
        self.entries[pair_id] = (basis, bit)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(eq=False)
class Photon:
    """A single photon: either a product polarization state or half of a pair."""

    basis: Basis | None = None
    bit: int | None = None
    pair_id: int | None = None
    registry: PairRegistry | None = field(default=None, repr=False)
    consumed: bool = False

    @classmethod
    def product(cls, basis: Basis, bit: int) -> "Photon":
        return cls(basis=Basis(basis), bit=int(bit))

    @classmethod
    def entangled(cls, registry: PairRegistry, pair_id: int) -> "Photon":
        return cls(pair_id=pair_id, registry=registry)

    @property
    def is_entangled(self) -> bool:
        return self.pair_id is not None and self.basis is None

    def copy(self) -> "Photon":
        """An unconsumed sibling in the same state (identical polarization or same pair)."""
        return Photon(self.basis, self.bit, self.pair_id, self.registry)


def measure(photon: Photon, basis: Basis, rng: SplitMix64) -> int:
    """Measure ``photon`` in ``basis``, collapsing it and, if entangled, its pair."""
    if photon.consumed:
        raise AlreadyConsumed("photon has already been measured")
    basis = Basis(basis)
    if photon.is_entangled:
        registry = photon.registry
        entry = registry.state(photon.pair_id)
        if entry is None:
            out = rng.bit()
            registry.collapse(photon.pair_id, basis, out)
        elif entry[0] == basis:
            out = entry[1]
        else:
            out = rng.bit()
    elif photon.basis == basis:
        out = photon.bit
    else:
        out = rng.bit()
    photon.basis, photon.bit = basis, out
    photon.consumed = True
    return out


@dataclass(frozen=True)
class PhotonSourceModel:
    """Photon-number distribution per arm.

    A single photon is emitted with probability ``p1``; the remaining mass is
    spread uniformly over ``2..max_photons``.
    """

    p1: float = 1.0
    max_photons: int = 2

    def __post_init__(self):
        if not 0.0 < self.p1 <= 1.0:
            raise ValueError(f"p1 must lie in (0, 1], got {self.p1}")
        if self.max_photons < 1 or (self.max_photons == 1 and self.p1 < 1.0):
            raise ValueError("max_photons must be >= 2 when p1 < 1")

    @property
    def p_multi(self) -> float:
        return 1.0 - self.p1

    def pmf(self) -> dict[int, float]:
        if self.p1 >= 1.0:
            return {1: 1.0}
        share = self.p_multi / (self.max_photons - 1)
        return {1: self.p1, **{n: share for n in range(2, self.max_photons + 1)}}

    def sample(self, rng: SplitMix64) -> int:
        if self.p1 >= 1.0:
            return 1
        if rng.uniform() < self.p1:
            return 1
        if self.max_photons == 2:
            return 2
        return 2 + rng.randbelow(self.max_photons - 1)


IDEAL_SOURCE = PhotonSourceModel()


@dataclass
class SignalPair:
    kind: SignalKind
    alice_arm: list[Photon]
    bob_arm: list[Photon]

    @property
    def multiplicity(self) -> tuple[int, int]:
        return len(self.alice_arm), len(self.bob_arm)


def emit_signal(
    kind: SignalKind,
    basis: Basis | None,
    bit: int | None,
    source: PhotonSourceModel,
    rng: SplitMix64,
    registry: PairRegistry,
) -> SignalPair:
    """Emit one slot of the stream.

    Key signals share a single registry entry across every photon in both
    arms, so any photon measured after the collapse in the collapse basis
    reproduces the key bit.
    """
    kind = SignalKind(kind)
    n_alice = source.sample(rng)
    n_bob = source.sample(rng)
    if kind is SignalKind.KEY:
        pair_id = registry.new_pair()
        make = lambda: Photon.entangled(registry, pair_id)  # noqa: E731
    else:
        if basis is None or bit is None:
            raise ValueError("tamper signals need a basis and a bit")
        make = lambda: Photon.product(basis, bit)  # noqa: E731
    return SignalPair(kind, [make() for _ in range(n_alice)], [make() for _ in range(n_bob)])


def split_arm(arm: list[Photon], n_keep: int) -> tuple[list[Photon], list[Photon]]:
    if n_keep >= len(arm):
        raise InsufficientPhotons(f"cannot keep {n_keep} of {len(arm)} photons")
    return arm[:n_keep], arm[n_keep:]
