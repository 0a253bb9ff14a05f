import math
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from qauth.qchannel import (
    AlreadyConsumed, Basis, InsufficientPhotons, PairRegistry, Photon, PhotonSourceModel,
    SignalKind, emit_signal, measure, split_arm,
)
from qauth.rng import SplitMix64

R, D = Basis.RECTILINEAR, Basis.DIAGONAL


def test_basis_conjugate():
    assert R.conjugate() is D and D.conjugate() is R
    assert len(Basis) == 2


def test_product_in_own_basis_is_deterministic():
    rng = SplitMix64(0)
    assert all(measure(Photon.product(R, 1), R, rng) == 1 for _ in range(1000))
    assert all(measure(Photon.product(D, 0), D, rng) == 0 for _ in range(1000))


def test_product_in_conjugate_basis_is_uniform():
    rng = SplitMix64(1)
    n = 100_000
    agree = sum(measure(Photon.product(R, 1), D, rng) == 1 for _ in range(n))
    assert abs(agree / n - 0.5) <= 4 * 0.5 / math.sqrt(n)


def test_measurement_rewrites_state_and_consumes():
    rng = SplitMix64(3)
    p = Photon.product(R, 1)
    out = measure(p, D, rng)
    assert p.consumed and (p.basis, p.bit) == (D, out)
    with pytest.raises(AlreadyConsumed):
        measure(p, D, rng)


@given(seed=st.integers(0, 2 ** 64 - 1), basis=st.sampled_from(list(Basis)), bit=st.integers(0, 1),
       mbasis=st.sampled_from(list(Basis)))
def test_collapse_idempotence(seed, basis, bit, mbasis):
    rng = SplitMix64(seed)
    p = Photon.product(basis, bit)
    out = measure(p, mbasis, rng)
    again = Photon.product(p.basis, p.bit)
    assert all(measure(again.copy(), mbasis, rng) == out for _ in range(5))


def _pair(reg):
    pid = reg.new_pair()
    return Photon.entangled(reg, pid), Photon.entangled(reg, pid), pid


def test_entangled_same_basis_agreement_is_exact():
    rng = SplitMix64(5)
    n = 100_000
    reg = PairRegistry()
    agree = 0
    for i in range(n):
        a, b, _ = _pair(reg)
        basis = Basis(i % 2)
        agree += measure(a, basis, rng) == measure(b, basis, rng)
    assert agree == n


def test_entangled_conjugate_basis_agreement_half():
    rng = SplitMix64(6)
    n = 100_000
    reg = PairRegistry()
    agree = 0
    for _ in range(n):
        a, b, _ = _pair(reg)
        agree += measure(a, R, rng) == measure(b, D, rng)
    assert abs(agree / n - 0.5) <= 4 * 0.5 / math.sqrt(n)


def test_registry_collapses_exactly_once():
    reg = PairRegistry()
    a, b, pid = _pair(reg)
    assert reg.state(pid) is None
    bit = measure(a, D, SplitMix64(0))
    assert reg.state(pid) == (D, bit)
    measure(b, R, SplitMix64(1))
    assert reg.state(pid) == (D, bit)


def test_intercept_resend_on_tamper_photon_gives_quarter_errors():
    rng = SplitMix64(7)
    n = 200_000
    errors = 0
    for _ in range(n):
        prep, bit = Basis(rng.bit()), rng.bit()
        eve_basis = Basis(rng.bit())
        seen = measure(Photon.product(prep, bit), eve_basis, rng)
        errors += measure(Photon.product(eve_basis, seen), prep, rng) != bit
    sigma = math.sqrt(0.25 * 0.75 / n)
    assert abs(errors / n - 0.25) <= 4 * sigma


def test_emit_tamper_ideal_source():
    reg = PairRegistry()
    sig = emit_signal(SignalKind.TAMPER, D, 0, PhotonSourceModel(1.0), SplitMix64(0), reg)
    assert sig.multiplicity == (1, 1)
    for p in sig.alice_arm + sig.bob_arm:
        assert (p.basis, p.bit, p.is_entangled) == (D, 0, False)
    assert len(reg) == 0


def test_emit_key_ideal_source():
    reg = PairRegistry()
    sig = emit_signal(SignalKind.KEY, None, None, PhotonSourceModel(1.0), SplitMix64(0), reg)
    (a,), (b,) = sig.alice_arm, sig.bob_arm
    assert a.is_entangled and b.is_entangled and a.pair_id == b.pair_id
    assert reg.state(a.pair_id) is None


def test_emit_tamper_requires_basis_and_bit():
    with pytest.raises(ValueError):
        emit_signal(SignalKind.TAMPER, None, None, PhotonSourceModel(), SplitMix64(), PairRegistry())


def test_single_photon_fraction_matches_source():
    src = PhotonSourceModel(0.5, 2)
    rng = SplitMix64(8)
    n = 1_000_000
    singles = sum(src.sample(rng) == 1 for _ in range(n))
    assert abs(singles / n - 0.5) <= 0.002


def test_multiplicity_histogram_within_4_sigma():
    src = PhotonSourceModel(0.4, 4)
    rng = SplitMix64(9)
    n = 200_000
    hist = Counter(src.sample(rng) for _ in range(n))
    for k, p in src.pmf().items():
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(hist[k] / n - p) <= 4 * sigma
    assert set(hist) <= set(src.pmf())


def test_multi_photon_emission_shares_state():
    reg = PairRegistry()
    src = PhotonSourceModel(0.01, 3)
    sig = emit_signal(SignalKind.KEY, None, None, src, SplitMix64(2), reg)
    ids = {p.pair_id for p in sig.alice_arm + sig.bob_arm}
    assert len(ids) == 1 and len(sig.alice_arm) >= 2


@pytest.mark.parametrize("p1,max_photons", [(0.0, 2), (1.5, 2), (0.5, 1)])
def test_source_validation(p1, max_photons):
    with pytest.raises(ValueError):
        PhotonSourceModel(p1, max_photons)


def test_split_arm_forwards_untouched():
    arm = [Photon.product(R, 0), Photon.product(R, 0)]
    kept, fwd = split_arm(arm, 1)
    assert len(kept) == len(fwd) == 1
    assert not fwd[0].consumed
    assert measure(fwd[0], R, SplitMix64(0)) == 0


def test_split_arm_boundaries():
    with pytest.raises(InsufficientPhotons):
        split_arm([Photon.product(R, 0)], 1)
    arm = [Photon.product(D, 1) for _ in range(3)]
    assert len(split_arm(arm, 2)[1]) == 1


def test_forwarded_photon_unaffected_by_measured_siblings():
    rng = SplitMix64(10)
    for _ in range(2000):
        basis, bit = Basis(rng.bit()), rng.bit()
        arm = [Photon.product(basis, bit) for _ in range(3)]
        kept, fwd = split_arm(arm, 2)
        for p in kept:
            measure(p, Basis(rng.bit()), rng)
        assert measure(fwd[0], basis, rng) == bit
