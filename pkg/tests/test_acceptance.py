"""Acceptance criteria 1-11. Each test logs one PASS/FAIL line shown in the pytest summary."""

import math
import os
import time
from fractions import Fraction

import pytest

from qauth import analysis as an
from qauth import kernel
from qauth.adversary import AdversaryStrategy
from qauth.classical import FrameError, decode_request, encode_request, receive
from qauth.protocol import (
    ALICE, BOB, DEFAULT_KEYS, Disclosure, ProtocolParams, Session, SpecParseError, TamperSpec,
    decode_tamper_spec, encode_tamper_spec,
)
from qauth.qchannel import Basis, PhotonSourceModel
from qauth.rng import SplitMix64, trial_seed
from qauth.sim import ExperimentConfig, build_report, collect_counts, run_experiment, wilson_interval

WORKERS = os.cpu_count() or 1


@pytest.fixture
def verdict(acceptance_log):
    def record(n: int, ok: bool, detail: str) -> None:
        acceptance_log(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail
    return record


def cfg(**kw):
    return ExperimentConfig.from_mapping(kw)


def test_criterion_01_honest_run(verdict):
    c = cfg(k=17, d=41, strategy="passive", trials=100_000)
    t0 = time.perf_counter()
    r = run_experiment(c)
    elapsed = time.perf_counter() - t0
    acc = r.metrics["alice_acceptance_rate"]["empirical_rate"]
    auth = r.metrics["authentication_rate"]["empirical_rate"]
    errs = r.counts["alice_tamper_errors"] + r.counts["bob_tamper_errors"]
    ok = acc == 1.0 and auth == 1.0 and errs == 0 and elapsed < 10.0
    verdict(1, ok, f"honest 1e5 trials: acceptance {acc}, tamper errors {errs}, "
                   f"{elapsed:.2f} s ({kernel.BACKEND})")


def test_criterion_02_intercept_resend_bit_error(verdict):
    c = cfg(k=1, d=41, strategy="intercept-resend", max_restarts=0, trials=25_000)
    counts = collect_counts(c)
    n, e = counts["alice_tamper_checked"], counts["alice_tamper_errors"]
    sigma = math.sqrt(0.25 * 0.75 / n)
    ok = n >= 1_000_000 and abs(e / n - 0.25) <= 4 * sigma
    verdict(2, ok, f"tamper-bit error {e / n:.5f} over {n} samples, 0.25 +/- {4 * sigma:.5f}")


def test_criterion_03_evasion(verdict):
    r = run_experiment(cfg(k=17, d=8, strategy="intercept-resend", max_restarts=0, trials=100_000))
    n, undetected = r.trials, r.trials - r.counts["detected"]
    lo, hi = wilson_interval(undetected, n)
    exact = float(Fraction(3, 4) ** 8)
    large_scale = an.evade_prob(41)
    ok = lo <= exact <= hi and large_scale == float(Fraction(3, 4) ** 41)
    verdict(3, ok, f"undetected {undetected / n:.5f}, CI [{lo:.5f}, {hi:.5f}] vs 0.75^8 = {exact:.9f}; "
                   f"evade_prob(41) = {large_scale:.4e}")


def test_criterion_04_forgery_bound(verdict):
    c = cfg(k=10, d=0, m=10, strategy="passive", trials=10_000_000)
    counts = collect_counts(c, workers=WORKERS)
    n, f = counts["trials"], counts["forged"]
    p = 2.0 ** -10
    sigma = math.sqrt(p * (1 - p) / n)
    ok = abs(f / n - p) <= 4 * sigma and an.forgery_prob(17) == 2.0 ** -17
    verdict(4, ok, f"forgery {f / n:.3e} over {n} trials vs 2^-10 = {p:.3e} (4 sigma {4 * sigma:.1e}); "
                   f"2^-17 = {an.forgery_prob(17):.3e}")


def test_criterion_05_oracle_equivalence(verdict):
    cases, bad = 0, []
    for n in range(1, 13):
        for k in range(1, n + 1):
            for g in range(k, n + 1):
                cases += 1
                if an.brute_force_subset_oracle(k, n - k, g).value != an.subset_guess_success(k, n - k, g).value:
                    bad.append((k, n - k, g))
    verdict(5, not bad, f"{cases} (k, d, g) cases with k+d <= 12 exact, mismatches {bad}")


def test_criterion_06_marginal_gain(verdict):
    cases, bad = 0, []
    for n in range(1, 13):
        for k in range(1, n + 1):
            for g in range(k, n):
                cases += 1
                ratio = an.subset_guess_success(k, n - k, g + 1).value / an.subset_guess_success(k, n - k, g).value
                if ratio != an.marginal_gain_ratio(g, k) * an.SURVIVE:
                    bad.append((k, n - k, g))
    boundary = all(
        an.marginal_gain_ratio(4 * k - 2, k) * an.SURVIVE > 1 >= an.marginal_gain_ratio(4 * k - 1, k) * an.SURVIVE
        for k in range(1, 7))
    verdict(6, not bad and boundary,
            f"ratio identity exact on {cases} cases; gain > 1 through g = 4k-2 and <= 1 after, k = 1..6")


def test_criterion_07_sizing(verdict):
    minimal = True
    for D in (1e-3, 1e-6, 1e-9, 2.0 ** -17):
        k, d = an.size_parameters(D)
        b = Fraction(D)
        minimal &= an.HALF ** k <= b < an.HALF ** (k - 1) and an.SURVIVE ** d <= b < an.SURVIVE ** (d - 1)
    sizes = an.size_parameters(2.0 ** -17)
    ratio = f"{an.balance_ratio():.2f}"
    verdict(7, sizes == (17, 41) and ratio == "2.41" and minimal,
            f"size_parameters(2^-17) = {sizes}, d/k ratio {ratio}, minimal for 4 targets: {minimal}")


def test_criterion_08_pns(verdict):
    r = run_experiment(cfg(k=17, d=16, strategy="pns", p1=0.5, max_restarts=0, trials=100_000))
    n, undetected = r.trials, r.trials - r.counts["detected"]
    lo, hi = wilson_interval(undetected, n)
    exact = an.pns_evade_exact(16, 0.5)
    approx = an.pns_evade_approx(16, 0.5)
    ok = lo <= exact <= hi and an.pns_adjusted_d(41, 0.5) == 82
    verdict(8, ok, f"undetected {undetected / n:.5f}, CI [{lo:.5f}, {hi:.5f}] vs 0.875^16 = {exact:.5f} "
                   f"(approximation 0.75^8 = {approx:.4f}); pns_adjusted_d(41, 0.5) = 82")


def test_criterion_09_oracle_locations(verdict):
    params = ProtocolParams(17, 41)
    rows = kernel.run_trials(params, AdversaryStrategy.oracle_locations(), PhotonSourceModel(), 1, 0, 10_000)
    detected = int(rows[:, kernel.FIELDS.index("detected")].sum())
    full = int((rows[:, kernel.FIELDS.index("eve_key_bits_known")] == params.k).sum())
    forged = int(rows[:, kernel.FIELDS.index("eve_forged")].sum())
    ok = detected == 0 and full == len(rows) == forged
    verdict(9, ok, f"{len(rows)} trials: detections {detected}, full key knowledge {full}, forgeries {forged}")


PINNED_POSITIONS = (2, 5, 9, 13, 14)
PINNED_ENTRIES = ((Basis.RECTILINEAR, 1), (Basis.DIAGONAL, 0), (Basis.DIAGONAL, 1),
                  (Basis.RECTILINEAR, 0), (Basis.DIAGONAL, 1))


def test_criterion_10_pinned_walkthrough(verdict):
    seed = 2024
    spec = TamperSpec(10, PINNED_POSITIONS, PINNED_ENTRIES)
    s = Session(ProtocolParams(10, 5), AdversaryStrategy.passive(), SplitMix64.for_trial(seed, 0),
                source=PhotonSourceModel(1.0), pinned_specs=[spec])
    out = s.run()
    rec = s.rounds[0]

    # with an ideal source and no eavesdropper the only draws before the key reveal
    # are Alice's collapses of the key pairs, one top bit per SplitMix64 output
    ref = SplitMix64(trial_seed(seed, 0))
    expected_bits = tuple(ref.next_u64() >> 63 for _ in range(10))
    flow_ok = (
        out.authenticated and out.alice_accepted and not out.eavesdropping_detected
        and rec.alice.key_slots == (0, 1, 3, 4, 6, 7, 8, 10, 11, 12)
        and rec.alice.key_bits == rec.bob.key_bits == expected_bits
        and rec.alice.tamper_errors == rec.bob.tamper_errors == 0
    )

    t = s.transcript
    req = receive(t, 0, DEFAULT_KEYS[ALICE])
    spec_a = receive(t, 1, DEFAULT_KEYS[ALICE])
    spec_b = receive(t, 2, DEFAULT_KEYS[BOB])
    disc = Disclosure.decode(receive(t, 3, None))
    round_trip = (
        encode_request(*decode_request(req)) == req
        and decode_tamper_spec(spec_a) == (0, spec) and spec_a == spec_b == encode_tamper_spec(spec, 0)
        and disc.encode() == t[3].ciphertext and disc.bits == expected_bits
        and all(m.ciphertext != p for m, p in zip(t.eve_view()[:3], (req, spec_a, spec_b)))
    )
    try:
        decode_tamper_spec(receive(t, 1, DEFAULT_KEYS[BOB]))
        wrong_key_rejected = False
    except (SpecParseError, FrameError):
        wrong_key_rejected = True
    ok = flow_ok and round_trip and wrong_key_rejected
    verdict(10, ok, f"tamper slots {PINNED_POSITIONS}: key bits {''.join(map(str, expected_bits))}, "
                    f"authenticated {out.authenticated}, transcript round-trips {round_trip}, "
                    f"wrong key rejected {wrong_key_rejected}")


def test_criterion_11_determinism(verdict):
    c = cfg(k=5, d=9, strategy="pns", p1=0.6, trials=30_000, seed=12345)
    base = run_experiment(c).to_json()
    variants = {
        "repeat": run_experiment(c).to_json(),
        "workers=4": run_experiment(c, workers=4).to_json(),
        **{f"backend={b}": run_experiment(c, backend=b).to_json() for b in kernel.available_backends()},
    }
    variants["chunk=4096"] = build_report(c, collect_counts(c, chunk=4096)).to_json()
    variants["chunk=4096,workers=3"] = build_report(c, collect_counts(c, workers=3, chunk=4096)).to_json()
    differing = [name for name, text in variants.items() if text != base]
    verdict(11, not differing, f"JSON byte-identical across {', '.join(variants)}; differing: {differing}")
