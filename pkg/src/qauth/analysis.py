"""Closed-form security quantities and brute-force oracles for them.

All combinatorics use Python integers and :class:`fractions.Fraction`, with the
per-slot survival probability of an intercepted tamper bit kept as the exact
rational 3/4. Floats appear only as the final conversion.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .adversary import AdversaryStrategy
    from .protocol import ProtocolParams
    from .qchannel import PhotonSourceModel

SURVIVE = Fraction(3, 4)
HALF = Fraction(1, 2)
ORACLE_LIMIT = 20

# rounded factors often quoted for the exact logarithm forms
ROUNDED_K_FACTOR = 1.44
ROUNDED_D_FACTOR = 3.48


class DomainError(ValueError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ExactProb:
    value: Fraction

    @property
    def numerator(self) -> int:
        return self.value.numerator

    @property
    def denominator(self) -> int:
        return self.value.denominator

    @property
    def float_value(self) -> float:
        return float(self.value)

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class SecurityTargets:
    D: float
    D_a: float
    D_e: float

    def __post_init__(self):
        for name in ("D", "D_a", "D_e"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise DomainError(f"{name} must lie in (0, 1)")


def forgery_prob(k: int) -> float:
    if k < 1:
        raise DomainError("k must be >= 1")
    return math.ldexp(1.0, -k)


def evade_prob(d: int) -> float:
    if d < 0:
        raise DomainError("d must be >= 0")
    return float(SURVIVE ** d)


def security_targets(k: int, d: int) -> SecurityTargets:
    da, de = forgery_prob(k), evade_prob(d)
    return SecurityTargets(max(da, de), da, de)


def _check_subset_domain(k: int, d: int, g: int) -> None:
    if k < 1 or d < 0:
        raise DomainError("need k >= 1 and d >= 0")
    if not k <= g <= k + d:
        raise DomainError(f"g must satisfy k <= g <= k + d, got k={k}, d={d}, g={g}")


def subset_guess_binomial_form(k: int, d: int, g: int) -> Fraction:
    _check_subset_domain(k, d, g)
    return Fraction(math.comb(k + d - k, g - k), math.comb(k + d, g)) * SURVIVE ** (g - k)


def subset_guess_factorial_form(k: int, d: int, g: int) -> Fraction:
    _check_subset_domain(k, d, g)
    f = math.factorial
    return Fraction(f(d) * f(g), f(k + d) * f(g - k)) * SURVIVE ** (g - k)


def subset_guess_success(k: int, d: int, g: int) -> ExactProb:
    """Probability that a random ``g``-subset covers every key slot and no tamper error shows."""
    a = subset_guess_binomial_form(k, d, g)
    b = subset_guess_factorial_form(k, d, g)
    if a != b:  # pragma: no cover - algebraic identity
        raise ArithmeticError(f"closed forms disagree at k={k}, d={d}, g={g}")
    return ExactProb(a)


def brute_force_subset_oracle(k: int, d: int, g: int) -> ExactProb:
    """Average success over every ``g``-subset of a stream with key slots ``0..k-1``.

    The tamper layout is fixed; by symmetry the average over Eve's uniformly
    chosen subset does not depend on it.
    """
    n = k + d
    if n > ORACLE_LIMIT:
        raise TooLarge(f"k + d = {n} exceeds the enumeration bound {ORACLE_LIMIT}")
    if not 0 <= g <= n:
        raise DomainError(f"g must lie in [0, {n}]")
    total = Fraction(0)
    count = 0
    for subset in itertools.combinations(range(n), g):
        count += 1
        chosen = set(subset)
        if all(s in chosen for s in range(k)):
            total += SURVIVE ** sum(1 for s in chosen if s >= k)
    return ExactProb(total / count)


def marginal_gain_ratio(g: int, k: int) -> Fraction:
    """Growth factor of the key-coverage term when Eve reads slot ``g + 1``."""
    if not g >= k >= 1:
        raise DomainError("need g >= k >= 1")
    return Fraction(g + 1, g + 1 - k)


def g_limit(k: int) -> int:
    """Largest ``g`` at which one more guessed slot still improves Eve's odds."""
    if k < 1:
        raise DomainError("k must be >= 1")
    return 4 * k - 2


def _min_exponent(base: Fraction, bound: Fraction, start: int) -> int:
    n = max(start, 0)
    while n > 0 and base ** (n - 1) <= bound:
        n -= 1
    while base ** n > bound:
        n += 1
    return n


def size_parameters(D: float, rounded_constants: bool = False) -> tuple[int, int]:
    """Smallest ``(k, d)`` with ``2**-k <= D`` and ``0.75**d <= D``.

    With ``rounded_constants`` the rounded factors 1.44 and 3.48 are used
    verbatim instead, which can differ by one from the exact sizes.
    """
    if not 0.0 < D < 1.0:
        raise DomainError("D must lie in (0, 1)")
    if rounded_constants:
        return (math.ceil(-ROUNDED_K_FACTOR * math.log(D)),
                math.ceil(-ROUNDED_D_FACTOR * math.log(D)))
    bound = Fraction(D)
    k = _min_exponent(HALF, bound, math.ceil(-math.log(D) / math.log(2)))
    d = _min_exponent(SURVIVE, bound, math.ceil(math.log(D) / math.log(0.75)))
    return k, d


def balance_ratio() -> float:
    """Tamper-to-key bit ratio at which forgery and evasion bounds coincide (about 2.41)."""
    return math.log(2) / -math.log(0.75)


def _check_p1(p1: float) -> None:
    if not 0.0 < p1 <= 1.0:
        raise DomainError("p1 must lie in (0, 1]")


def pns_effective_d(d: int, p1: float) -> float:
    _check_p1(p1)
    return p1 * d


def pns_adjusted_d(d: int, p1: float) -> int:
    _check_p1(p1)
    return math.ceil(Fraction(d) / Fraction(p1))


def pns_evade_approx(d: int, p1: float) -> float:
    """The point approximation ``0.75 ** (p1 * d)``."""
    return 0.75 ** pns_effective_d(d, p1)


def pns_evade_exact(d: int, p1: float) -> float:
    """``E[0.75 ** Binomial(d, p1)] = (1 - p1/4) ** d``."""
    _check_p1(p1)
    return float((1 - Fraction(p1) / 4) ** d)


def _hypergeom_survival(pool: int, other: int, g: int, per_hit: Fraction) -> Fraction:
    """``E[per_hit ** J]`` where ``J`` counts ``pool`` slots in a uniform ``g``-subset of ``pool + other``."""
    total = math.comb(pool + other, g)
    acc = Fraction(0)
    for j in range(max(0, g - other), min(pool, g) + 1):
        acc += Fraction(math.comb(pool, j) * math.comb(other, g - j), total) * per_hit ** j
    return acc


def subset_evade_prob(k: int, d: int, g: int) -> ExactProb:
    """No tamper error after a uniform ``g``-subset intercept, whatever the key coverage."""
    if not 0 <= g <= k + d:
        raise DomainError("g out of range")
    return ExactProb(_hypergeom_survival(d, k, g, SURVIVE))


def subset_key_agreement(k: int, d: int, g: int) -> ExactProb:
    """Alice and Bob key vectors still agree after a uniform ``g``-subset intercept."""
    if not 0 <= g <= k + d:
        raise DomainError("g out of range")
    return ExactProb(_hypergeom_survival(k, d, g, SURVIVE))


def closed_forms(params: "ProtocolParams", strategy: "AdversaryStrategy",
                 source: "PhotonSourceModel") -> dict[str, float | None]:
    """Analytic value for each experiment metric, or ``None`` where no closed form is derived.

    Per-round detection ``q`` drives the restart statistics: with ``R`` allowed
    restarts the trial ends unauthenticated with probability ``q**(R+1)`` and
    performs ``sum(q**j, j=1..R)`` restarts on average.
    """
    from .adversary import Attack

    k, d, m, R = params.k, params.d, params.m, params.max_restarts
    n = k + d
    attack = strategy.attack
    arms = len(strategy.arms)
    p1 = Fraction(source.p1)
    exact_threshold = params.error_threshold == 0.0
    out: dict[str, float | None] = dict.fromkeys(METRICS)

    if attack in (Attack.PASSIVE, Attack.ORACLE_LOCATIONS):
        oracle = attack is Attack.ORACLE_LOCATIONS
        out.update(
            detection_rate=0.0, evasion_rate=1.0, restart_limit_rate=0.0,
            alice_tamper_error_rate=0.0, bob_tamper_error_rate=0.0,
            key_agreement_rate=1.0, alice_acceptance_rate=1.0, authentication_rate=1.0,
            forgery_rate=1.0 if oracle else float(HALF ** m),
            eve_key_knowledge_rate=1.0 if oracle else 0.0,
            coverage_success_rate=1.0 if oracle else 0.0,
            mean_restarts=0.0,
        )
        return out

    if attack is Attack.INTERCEPT_RESEND:
        tamper_err = Fraction(1, 4)
        slot_survive = SURVIVE
        evade_arm = SURVIVE ** d
        agree = SURVIVE ** k if arms == 1 else None
        know = HALF if arms == 1 else SURVIVE
        covered = evade_arm ** arms
    elif attack is Attack.PNS:
        slot_survive = 1 - p1 / 4
        tamper_err = p1 / 4
        evade_arm = slot_survive ** d
        agree = slot_survive ** k if arms == 1 else None
        know = 1 - p1 / 2 if arms == 1 else 1 - (p1 / 2) ** 2
        covered = evade_arm ** arms
    else:  # subset guess
        g = strategy.g
        slot_survive = None
        tamper_err = Fraction(g, n) / 4
        evade_arm = subset_evade_prob(k, d, g).value
        # restarts bias the final round toward subsets with few tamper slots,
        # so the single-round key statistics only hold without restarts
        single = arms == 1 and R == 0
        agree = subset_key_agreement(k, d, g).value if single else None
        know = Fraction(g, n) / 2 if single else None
        covered = subset_guess_success(k, d, g).value if (arms == 1 and g >= k) else (
            Fraction(0) if g < k else None)

    f = lambda x: None if x is None else float(x)  # noqa: E731
    out.update(
        alice_tamper_error_rate=float(tamper_err) if "alice" in strategy.arms else 0.0,
        bob_tamper_error_rate=float(tamper_err) if "bob" in strategy.arms else 0.0,
        key_agreement_rate=f(agree),
        eve_key_knowledge_rate=f(know),
    )
    if not exact_threshold:
        return out

    evade = evade_arm ** arms
    q = 1 - evade
    final_pass = 1 - q ** (R + 1)
    out.update(
        detection_rate=float(q),
        evasion_rate=float(evade),
        restart_limit_rate=float(q ** (R + 1)),
        mean_restarts=float(sum(q ** j for j in range(1, R + 1))),
        coverage_success_rate=f(covered),
    )
    if arms == 1 and slot_survive is not None:
        out.update(
            alice_acceptance_rate=float(slot_survive ** m * final_pass),
            forgery_rate=float(slot_survive ** m * final_pass),
        )
    return out


METRICS = (
    "authentication_rate",
    "alice_acceptance_rate",
    "detection_rate",
    "evasion_rate",
    "restart_limit_rate",
    "forgery_rate",
    "coverage_success_rate",
    "alice_tamper_error_rate",
    "bob_tamper_error_rate",
    "key_agreement_rate",
    "eve_key_knowledge_rate",
    "mean_restarts",
)
