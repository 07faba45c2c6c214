import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from kcq.cppm import (
    CppmConstellation,
    CppmError,
    bob_detect_batch,
    bob_direct_detect,
    build_scrambler,
    cppm_row,
    direct_detection_error,
    eve_heterodyne_attack,
    eve_heterodyne_batch,
    flat_profile_test,
    heterodyne_error_lower_bound,
    keygen_rate,
    optimize_bound,
    simulate_cppm,
    unitarity_defect,
)
from kcq.keystream import KeystreamError

KEY = 0x5DEECE66D3A4C1F29B7E0C86F1D2A49


def exact_keyed_eve_error(N, S):
    """1 - P(sent score beats N-1 i.i.d. wrong scores), scores N(sqrt(2S), 1) vs N(0, 1)."""
    mu = math.sqrt(2 * S)
    f = lambda t: stats.norm.pdf(t - mu) * stats.norm.cdf(t) ** (N - 1)
    correct, _ = integrate.quad(f, -12, mu + 12, epsabs=1e-13, limit=200)
    return 1.0 - correct


@pytest.mark.parametrize("N", [2, 4, 16, 64, 256])
def test_scrambler_unitary_and_dense(N):
    U = build_scrambler(KEY, N)
    assert unitarity_defect(U) < 1e-10
    assert np.all(np.abs(U) > 0)


def test_scrambler_depends_on_key_only():
    a = build_scrambler(KEY, 32)
    b = build_scrambler(KEY, 32)
    assert np.array_equal(a, b)
    a[0, 0] = 0  # callers get a copy, the cache is untouched
    assert np.array_equal(build_scrambler(KEY, 32), b)
    c = build_scrambler(KEY ^ 1, 32)
    assert np.max(np.abs(b - c)) > 0.1
    assert np.array_equal(build_scrambler(1, 8), build_scrambler("0" * 126 + "1", 8))


def test_scrambler_input_checks():
    for N in (1, 3, 12, 2048):
        with pytest.raises(CppmError):
            build_scrambler(KEY, N)
    with pytest.raises(KeystreamError):
        build_scrambler("0" * 127, 8)
    with pytest.raises(KeystreamError):
        build_scrambler("101", 8)


def test_constellation_energy_and_rate():
    const = CppmConstellation(64, 3.0, KEY)
    assert np.allclose(const.energies(), 3.0, atol=1e-12)
    assert const.n == keygen_rate(64) == 6
    back = const.U.conj().T @ const.signal(5)
    assert np.allclose(back, const.unscrambled(5), atol=1e-12)
    with pytest.raises(CppmError):
        CppmConstellation(8, -1.0)


def test_bob_exact_formula():
    assert direct_detection_error(16, 2.0) == pytest.approx((15 / 16) * math.exp(-2.0), rel=1e-15)
    rep = simulate_cppm(16, 2.0, 100_000, seed=1, key=KEY, eve=False)
    assert abs(rep.estimates["bob_error"] - rep.analytic["bob_err_exact"]) < 3 * rep.estimates["bob_sigma"]
    assert "eve_error" not in rep.estimates


def test_bob_never_errs_when_a_photon_arrives():
    const = CppmConstellation(8, 30.0, KEY)
    rng = np.random.default_rng(0)
    sent = rng.integers(0, 8, 2000)
    assert np.array_equal(bob_detect_batch(const, sent, rng), sent)
    assert bob_direct_detect(3, const, rng) == 3


@pytest.mark.parametrize("N,S", [(2, 1.0), (16, 2.0), (64, 4.0)])
def test_keyed_eve_matches_exact_error(N, S):
    exact = exact_keyed_eve_error(N, S)
    rep = simulate_cppm(N, S, 60_000, seed=3, key=KEY, bob=False)
    sigma = math.sqrt(exact * (1 - exact) / 60_000)
    assert abs(rep.estimates["eve_error"] - exact) < 3 * sigma


def test_two_message_case_is_binary_heterodyne():
    # difference of the two scores is N(sqrt(2S), 2), error Q(sqrt(S))
    assert exact_keyed_eve_error(2, 1.5) == pytest.approx(stats.norm.sf(math.sqrt(1.5)), abs=1e-10)


def test_bound_example_and_validity():
    assert heterodyne_error_lower_bound(4, 2.0, 3.0, competitors=4) == pytest.approx(0.0045337280269417245,
                                                                                     rel=1e-12)
    for n, S in [(1, 1.0), (4, 2.0), (6, 3.0), (8, 2.0)]:
        _, bound = optimize_bound(n, S)
        assert bound <= exact_keyed_eve_error(1 << n, S) + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.floats(0.1, 8.0), st.floats(-4, 10))
def test_bound_is_below_its_maximum(n, S, y):
    _, best = optimize_bound(n, S)
    assert 0.0 <= heterodyne_error_lower_bound(n, S, y) <= best + 1e-6


def test_bound_grows_with_block_length():
    vals = [optimize_bound(n, 2.0)[1] for n in range(1, 21)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 0.98
    with pytest.raises(CppmError):
        heterodyne_error_lower_bound(0, 1.0, 0.0)


def test_eve_error_is_key_invariant():
    a = simulate_cppm(16, 2.0, 60_000, seed=4, key=KEY, bob=False)
    b = simulate_cppm(16, 2.0, 60_000, seed=5, key=12345, bob=False)
    sig = math.hypot(a.estimates["eve_sigma"], b.estimates["eve_sigma"])
    assert abs(a.estimates["eve_error"] - b.estimates["eve_error"]) < 3 * sig


def test_key_withheld_is_worse_for_eve():
    with_key = simulate_cppm(16, 4.0, 20_000, seed=6, key=KEY, bob=False)
    without = simulate_cppm(16, 4.0, 20_000, seed=6, key=KEY, bob=False, key_granted_after=False)
    assert without.estimates["eve_error"] > with_key.estimates["eve_error"] + 0.2


def test_relabelling_messages_permutes_decisions():
    # permuting the columns of U permutes the decisions on identical noise
    const = CppmConstellation(16, 2.0, KEY)
    perm = np.random.default_rng(2).permutation(16)
    swapped = CppmConstellation(16, 2.0, KEY)
    swapped.U = const.U[:, perm]
    sent = np.random.default_rng(3).integers(0, 16, 5000)
    a = eve_heterodyne_batch(const, perm[sent], np.random.default_rng(9))
    b = eve_heterodyne_batch(swapped, sent, np.random.default_rng(9))
    assert np.array_equal(a.decisions, perm[b.decisions])


def test_posterior_is_a_distribution():
    const = CppmConstellation(16, 2.0, KEY)
    rng = np.random.default_rng(1)
    guess, post = eve_heterodyne_attack(7, const, rng)
    assert post.shape == (16,) and post.sum() == pytest.approx(1.0)
    assert guess == int(np.argmax(post))


def test_wrong_decisions_are_flat():
    prof = flat_profile_test(16, 1.0, 60_000, seed=2, key=KEY)
    assert prof.error_events > 1000
    assert prof.p_value > 1e-3
    assert prof.wrong_spread < 0.02
    assert prof.mean_true_posterior > prof.mean_wrong_posterior.max()
    with pytest.raises(CppmError):
        flat_profile_test(64, 8.0, 100, seed=1, key=KEY)
    assert flat_profile_test(2, 1.0, 1000, seed=1).p_value == 1.0


def test_simulation_deterministic_and_row():
    a = simulate_cppm(8, 1.0, 5000, seed=11, key=KEY)
    b = simulate_cppm(8, 1.0, 5000, seed=11, key=KEY)
    assert a.to_dict() == b.to_dict()
    row = cppm_row(8, 1.0, 5000, seed=11, key=KEY)
    assert list(row) == ["N", "S", "bob_err", "eve_err", "bob_err_exact", "eve_err_bound", "chi2_p"]
    assert row["bob_err"] == a.estimates["bob_error"]
