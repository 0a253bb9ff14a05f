"""Oracle-equality checks behind ``qauth selftest``."""

from __future__ import annotations

from fractions import Fraction

from . import analysis as an
from . import kernel
from .adversary import AdversaryStrategy
from .classical import keystream_words
from .protocol import ProtocolParams, Session
from .qchannel import PhotonSourceModel
from .rng import SplitMix64
from .sim import ExperimentConfig, run_experiment

Check = tuple[str, bool, str]


def _oracle_equality() -> Check:
    cases = 0
    for n in range(1, 13):
        for k in range(1, n + 1):
            d = n - k
            for g in range(k, n + 1):
                cases += 1
                if an.brute_force_subset_oracle(k, d, g).value != an.subset_guess_success(k, d, g).value:
                    return "subset oracle == closed form", False, f"k={k} d={d} g={g}"
    return "subset oracle == closed form", True, f"{cases} cases, exact"


def _marginal_identity() -> Check:
    for n in range(1, 13):
        for k in range(1, n + 1):
            d = n - k
            for g in range(k, n):
                lhs = an.subset_guess_success(k, d, g + 1).value / an.subset_guess_success(k, d, g).value
                if lhs != an.marginal_gain_ratio(g, k) * an.SURVIVE:
                    return "marginal gain identity", False, f"k={k} d={d} g={g}"
    return "marginal gain identity", True, "exact for k+d <= 12"


def _g_limit() -> Check:
    for k in range(1, 7):
        gain = lambda g: an.marginal_gain_ratio(g, k) * an.SURVIVE  # noqa: E731
        lim = an.g_limit(k)
        if not (gain(lim) > 1 and gain(lim + 1) <= 1):
            return "g limit 4k-2", False, f"k={k}"
    return "g limit 4k-2", True, "k = 1..6"


def _sizing() -> Check:
    if an.size_parameters(2.0 ** -17) != (17, 41):
        return "sizing", False, str(an.size_parameters(2.0 ** -17))
    for D in (1e-3, 1e-6, 1e-9, 2.0 ** -17):
        k, d = an.size_parameters(D)
        bound = Fraction(D)
        if not (an.HALF ** k <= bound < an.HALF ** (k - 1) and an.SURVIVE ** d <= bound < an.SURVIVE ** (d - 1)):
            return "sizing", False, f"D={D}"
    ok = f"{an.balance_ratio():.2f}" == "2.41"
    return "sizing", ok, f"(17, 41) at 2^-17, minimal, d/k {an.balance_ratio():.2f}"


def _pns() -> Check:
    ok = an.pns_adjusted_d(41, 0.5) == 82 and an.pns_effective_d(41, 0.5) == 20.5
    return "PNS correction", ok, "pns_adjusted_d(41, 0.5) = 82"


def _keystream() -> Check:
    word = next(keystream_words(0, 0, 1))
    return "keystream vector", word == 0xE220A8397B1DCDAF, hex(word)


def _kernel_matches_model() -> Check:
    params = ProtocolParams(3, 4, max_restarts=1)
    for strategy in (AdversaryStrategy.intercept_resend(), AdversaryStrategy.pns(),
                     AdversaryStrategy.subset_guess(4)):
        src = PhotonSourceModel(0.5)
        for backend in kernel.available_backends():
            rows = kernel.run_trials(params, strategy, src, 11, 0, 50, backend)
            for i in range(50):
                got = Session(params, strategy, SplitMix64.for_trial(11, i), src).run().as_row()
                if got != tuple(int(x) for x in rows[i]):
                    return "kernel == object model", False, f"{strategy.attack.value} {backend} trial {i}"
    return "kernel == object model", True, ", ".join(kernel.available_backends())


def _monte_carlo(trials: int) -> Check:
    cfg = ExperimentConfig.from_mapping(
        {"strategy": "intercept-resend", "k": 4, "d": 8, "trials": trials, "max_restarts": 0})
    bad = run_experiment(cfg).inconsistent()
    return "intercept-resend Monte Carlo |z| <= 4", not bad, ", ".join(bad) or f"{trials} trials"


def run_checks(trials: int = 20_000) -> list[Check]:
    checks = [_oracle_equality(), _marginal_identity(), _g_limit(), _sizing(), _pns(), _keystream(),
              _kernel_matches_model()]
    if trials > 0:
        checks.append(_monte_carlo(trials))
    return checks
