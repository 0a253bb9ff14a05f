"""Eavesdropper strategies acting on one quantum path, plus token forgery."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .qchannel import Basis, Photon, measure, split_arm
from .rng import SplitMix64, sample_subset

if TYPE_CHECKING:
    from .protocol import TamperSpec


class MissingSpec(Exception):
    """OracleLocations was asked to act without the tamper specification."""


class Attack(str, enum.Enum):
    PASSIVE = "passive"
    INTERCEPT_RESEND = "intercept-resend"
    SUBSET_GUESS = "subset-guess"
    PNS = "pns"
    ORACLE_LOCATIONS = "oracle-locations"

    @property
    def code(self) -> int:
        return list(Attack).index(self)


PLACEMENTS = {"alice": ("alice",), "bob": ("bob",), "both": ("alice", "bob")}


@dataclass(frozen=True)
class AdversaryStrategy:
    """Which attack Eve runs and on which quantum path(s).

    ``knows_plaintext`` grants Eve the decrypted tamper specification in time
    to use it; only :attr:`Attack.ORACLE_LOCATIONS` makes use of it.
    """

    attack: Attack = Attack.PASSIVE
    g: int | None = None
    knows_plaintext: bool = False
    placement: str = "alice"

    def __post_init__(self):
        object.__setattr__(self, "attack", Attack(self.attack))
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {sorted(PLACEMENTS)}")
        if self.attack is Attack.SUBSET_GUESS:
            if self.g is None or self.g < 0:
                raise ValueError("subset-guess needs g >= 0")
        elif self.g is not None:
            raise ValueError("g only applies to subset-guess")

    @classmethod
    def passive(cls, **kw) -> "AdversaryStrategy":
        return cls(Attack.PASSIVE, **kw)

    @classmethod
    def intercept_resend(cls, **kw) -> "AdversaryStrategy":
        return cls(Attack.INTERCEPT_RESEND, **kw)

    @classmethod
    def subset_guess(cls, g: int, **kw) -> "AdversaryStrategy":
        return cls(Attack.SUBSET_GUESS, g=g, **kw)

    @classmethod
    def pns(cls, **kw) -> "AdversaryStrategy":
        return cls(Attack.PNS, **kw)

    @classmethod
    def oracle_locations(cls, **kw) -> "AdversaryStrategy":
        kw.setdefault("knows_plaintext", True)
        return cls(Attack.ORACLE_LOCATIONS, **kw)

    @property
    def arms(self) -> tuple[str, ...]:
        return PLACEMENTS[self.placement]

    def is_rational_guess(self, k: int, d: int) -> bool:
        """Subset sizes below k can never cover the key; they are allowed but flagged."""
        return self.attack is not Attack.SUBSET_GUESS or k <= self.g <= k + d

    def validate(self, k: int, d: int) -> None:
        if self.attack is Attack.SUBSET_GUESS and self.g > k + d:
            raise ValueError(f"g={self.g} exceeds stream length {k + d}")


@dataclass
class EveKnowledge:
    key_basis: Basis = Basis.RECTILINEAR
    observations: dict[int, tuple[Basis, int]] = field(default_factory=dict)
    measured_slots: set[int] = field(default_factory=set)
    retained: list[tuple[int, Photon]] = field(default_factory=list)
    disturbed_tamper_slots: int = 0

    def record(self, slot: int, basis: Basis, bit: int) -> None:
        # a key-basis reading supersedes a conjugate one from the other path
        old = self.observations.get(slot)
        if old is None or (old[0] != self.key_basis and basis == self.key_basis):
            self.observations[slot] = (basis, bit)

    @property
    def slot_bits(self) -> dict[int, int]:
        """Bits Eve actually learned: readings taken in the key basis."""
        return {s: b for s, (basis, b) in self.observations.items() if basis == self.key_basis}

    def known_key_bits(self, key_slots: Sequence[int]) -> int:
        bits = self.slot_bits
        return sum(1 for s in key_slots if s in bits)


def _intercept(arm: list[Photon], slot: int, rng: SplitMix64, knowledge: EveKnowledge) -> list[Photon]:
    basis = Basis(rng.bit())
    bit = measure(arm[0], basis, rng)
    knowledge.record(slot, basis, bit)
    knowledge.measured_slots.add(slot)
    return [Photon.product(basis, bit)]


def apply(
    strategy: AdversaryStrategy,
    arms: list[list[Photon]],
    spec: "TamperSpec | None",
    rng: SplitMix64,
    key_basis: Basis = Basis.RECTILINEAR,
    knowledge: EveKnowledge | None = None,
) -> tuple[list[list[Photon]], EveKnowledge]:
    """Run ``strategy`` on one path's arms, returning what reaches the receiver."""
    if knowledge is None:
        knowledge = EveKnowledge(key_basis=key_basis)
    attack = strategy.attack
    forwarded = list(arms)

    if attack is Attack.PASSIVE:
        pass
    elif attack is Attack.INTERCEPT_RESEND:
        for slot, arm in enumerate(arms):
            forwarded[slot] = _intercept(arm, slot, rng, knowledge)
    elif attack is Attack.SUBSET_GUESS:
        for slot in sample_subset(len(arms), strategy.g, rng):
            forwarded[slot] = _intercept(arms[slot], slot, rng, knowledge)
    elif attack is Attack.PNS:
        for slot, arm in enumerate(arms):
            if len(arm) >= 2:
                kept, forwarded[slot] = split_arm(arm, 1)
                knowledge.retained.append((slot, kept[0]))
                knowledge.measured_slots.add(slot)
            else:
                forwarded[slot] = _intercept(arm, slot, rng, knowledge)
    elif attack is Attack.ORACLE_LOCATIONS:
        if spec is None:
            raise MissingSpec("oracle-locations needs the tamper specification")
        tamper = set(spec.positions)
        for slot, arm in enumerate(arms):
            if slot in tamper:
                continue
            bit = measure(arm[0], key_basis, rng)
            knowledge.record(slot, key_basis, bit)
            knowledge.measured_slots.add(slot)
            forwarded[slot] = [Photon.product(key_basis, bit)]
    else:  # pragma: no cover
        raise ValueError(attack)
    return forwarded, knowledge


def measure_retained(knowledge: EveKnowledge, rng: SplitMix64) -> None:
    """Measure photons kept by PNS, in the key basis, once the honest parties are done."""
    for slot, photon in knowledge.retained:
        if not photon.consumed:
            bit = measure(photon, knowledge.key_basis, rng)
            knowledge.record(slot, knowledge.key_basis, bit)


@dataclass(frozen=True)
class ForgedToken:
    slots: tuple[int, ...]
    bits: tuple[int, ...]
    guessed: int


def forge_attempt(knowledge: EveKnowledge, disclosed_slots: Sequence[int], k: int, m: int,
                  rng: SplitMix64) -> ForgedToken:
    """Eve's impersonation token: known bits where she has them, coin flips elsewhere."""
    if len(disclosed_slots) != m or not 1 <= m <= k:
        raise ValueError("disclosed slot count must equal m with 1 <= m <= k")
    known = knowledge.slot_bits
    bits, guessed = [], 0
    for slot in disclosed_slots:
        if slot in known:
            bits.append(known[slot])
        else:
            bits.append(rng.bit())
            guessed += 1
    return ForgedToken(tuple(disclosed_slots), tuple(bits), guessed)
