import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcq.keystream import KeyMaterial
from kcq.qubit import (
    BREIDBART_ERROR,
    EveMeasurement,
    QubitError,
    QubitSignalSet,
    code_rate_window,
    eve_collective_error,
    opaque_attack_mc,
    optimize_eve_basis,
    repeated_key_opaque_attack,
    simulate_protocol,
)

DENSE_KEY = 0x5DEECE66D3A4C1F29B7E0C86F1D2A49


def born_rule_error(M, theta, key_after, eve_axis=None):
    """Eve's error from explicit kets and projectors, independent of the Bloch formula.

    ``eve_axis`` optionally overrides the measurement with a Bloch unit vector
    (x, y, z), which allows directions off the signal great circle.
    """
    sig = QubitSignalSet(M)
    if eve_axis is None:
        e0 = np.array([math.cos(theta), math.sin(theta)], dtype=complex)
    else:
        x, y, z = eve_axis
        # ket with Bloch vector (x, y, z): cos(a/2)|0> + e^{i b} sin(a/2)|1>
        a, b = math.acos(max(-1.0, min(1.0, z))), math.atan2(y, x)
        e0 = np.array([math.cos(a / 2), np.exp(1j * b) * math.sin(a / 2)])
    P0 = np.outer(e0, e0.conj())
    like = np.zeros((M, 2, 2))  # basis, bit, outcome
    for j in range(M):
        for bit in range(2):
            # signal kets on the x-z great circle: Bloch angle phi from +z toward +x
            ket = sig.ket(j, bit).astype(complex)
            p0 = float(np.real(ket.conj() @ P0 @ ket))
            like[j, bit] = (p0, 1 - p0)
    if key_after:
        return float(np.mean([0.5 * np.minimum(like[j, 0], like[j, 1]).sum() for j in range(M)]))
    avg = like.mean(axis=0)
    return 0.5 * float(np.minimum(avg[0], avg[1]).sum())


def test_signal_set_geometry():
    sig = QubitSignalSet(2)
    kets = sig.states()
    # within a basis the two states are orthogonal
    for j in range(2):
        assert abs(kets[2 * j] @ kets[2 * j + 1]) < 1e-15
    # the four states are |0>, |1> and the two diagonal states (up to sign)
    targets = [np.array([1, 0]), np.array([0, 1]), np.array([1, 1]) / math.sqrt(2), np.array([1, -1]) / math.sqrt(2)]
    for k in kets:
        assert max(abs(abs(k @ t) - 1) for t in targets) < 1e-15 or min(abs(abs(k @ t) - 1) for t in targets) < 1e-15
    with pytest.raises(QubitError):
        QubitSignalSet(1)


@pytest.mark.parametrize("M", [2, 4, 8, 64])
def test_bit_averaged_state_is_maximally_mixed(M):
    sig = QubitSignalSet(M)
    for j in range(M):
        assert np.array_equal(np.round(sig.key_averaged_density(j), 15), np.eye(2) / 2)


@pytest.mark.parametrize("M", [2, 4, 6, 16])
@pytest.mark.parametrize("after", [True, False])
def test_error_formula_matches_born_rule(M, after):
    for theta in np.linspace(0, math.pi, 13, endpoint=False):
        assert eve_collective_error(M, theta, after) == pytest.approx(born_rule_error(M, theta, after), abs=1e-12)


def test_reference_angles():
    assert eve_collective_error(2, math.pi / 8) == pytest.approx(BREIDBART_ERROR, abs=1e-15)
    assert BREIDBART_ERROR == pytest.approx(0.14644660940672624, abs=1e-16)
    assert eve_collective_error(2, 0.0) == pytest.approx(0.25, abs=1e-15)


def test_breidbart_optimum_and_its_twin():
    opt = optimize_eve_basis(2)
    assert opt.error == pytest.approx(0.146447, abs=1e-6)
    assert len(opt.optima) == 2
    assert opt.optima[0] == pytest.approx(math.pi / 8, abs=1e-7)
    assert opt.optima[1] == pytest.approx(3 * math.pi / 8, abs=1e-7)


def test_optimum_grows_with_basis_count():
    errs = [optimize_eve_basis(M).error for M in (2, 4, 8, 16, 64)]
    assert all(a < b for a, b in zip(errs, errs[1:]))
    no_key = [optimize_eve_basis(M, key_after=False).error for M in (2, 4, 8, 16, 64)]
    assert all(a < b for a, b in zip(no_key, no_key[1:]))
    assert no_key[-1] >= 0.48


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([2, 4, 8, 16]), st.floats(0, math.pi, exclude_max=True), st.integers(-5, 5))
def test_error_symmetric_under_ring_rotation(M, theta, k):
    # rotating Eve's basis by pi/M maps the keyed constellation onto itself
    shifted = (theta + k * math.pi / M) % math.pi
    assert eve_collective_error(M, shifted, True) == pytest.approx(eve_collective_error(M, theta, True), abs=1e-12)
    # theta and theta + pi/2 are the same basis with the outcomes swapped
    twin = (theta + math.pi / 2) % math.pi
    assert eve_collective_error(M, twin, False) == pytest.approx(eve_collective_error(M, theta, False), abs=1e-12)


def test_tilting_off_the_signal_circle_never_helps():
    rng = np.random.default_rng(1)
    for M in (2, 4):
        best = optimize_eve_basis(M).error
        for _ in range(200):
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            assert born_rule_error(M, None, True, eve_axis=v) >= best - 1e-12


def test_breidbart_monte_carlo():
    key = KeyMaterial.from_int(DENSE_KEY, 127)
    rep = simulate_protocol(10 ** 5, 2, key, 0.0, EveMeasurement.breidbart(), seed=42)
    assert rep.estimates["bob_error"] == 0.0
    assert abs(rep.estimates["eve_error"] - BREIDBART_ERROR) < 0.004
    assert rep.counts["key_bits_used"] == 10 ** 5


def test_channel_noise_only():
    key = KeyMaterial.from_int(DENSE_KEY, 127)
    n = 50_000
    rep = simulate_protocol(n, 2, key, 0.1, None, seed=3)
    assert abs(rep.estimates["bob_error"] - 0.1) < 3 * math.sqrt(0.09 / n)
    assert "eve_error" not in rep.estimates


def test_more_bases_cost_eve_more():
    key16 = KeyMaterial.from_int(DENSE_KEY, 127)
    opt = optimize_eve_basis(16)
    rep = simulate_protocol(10 ** 4, 16, key16, 0.0, EveMeasurement(opt.theta), seed=9)
    assert rep.counts["key_bits_used"] == 4 * 10 ** 4
    assert rep.estimates["eve_error"] >= BREIDBART_ERROR - 3 * rep.estimates["eve_sigma"]
    assert abs(rep.estimates["eve_error"] - opt.error) < 3 * rep.estimates["eve_sigma"]


def test_key_withheld_monte_carlo():
    key = KeyMaterial.from_int(DENSE_KEY, 127)
    opt = optimize_eve_basis(8, key_after=False)
    rep = simulate_protocol(40_000, 8, key, 0.0, EveMeasurement(opt.theta), seed=4, eve_key_after=False)
    assert abs(rep.estimates["eve_error"] - opt.error) < 3 * rep.estimates["eve_sigma"]


def test_simulation_is_deterministic_per_seed():
    a = simulate_protocol(5000, 4, KeyMaterial.from_int(DENSE_KEY, 127), 0.05, EveMeasurement(0.3), seed=1)
    b = simulate_protocol(5000, 4, KeyMaterial.from_int(DENSE_KEY, 127), 0.05, EveMeasurement(0.3), seed=1)
    assert a.to_dict() == b.to_dict()


def test_simulation_rejects_bad_inputs():
    key = KeyMaterial.from_int(DENSE_KEY, 127)
    with pytest.raises(QubitError):
        simulate_protocol(10, 2, key, 0.5)
    with pytest.raises(QubitError):
        simulate_protocol(10, 6, key, 0.0)
    with pytest.raises(QubitError):
        EveMeasurement(math.pi)


def test_insufficient_keystream_is_an_error():
    short = KeyMaterial(np.ones(4, dtype=np.uint8), "repeat", repeat_total=8)
    with pytest.raises(Exception):
        simulate_protocol(100, 2, short, 0.0)


def test_block_guessing_arithmetic():
    r = repeated_key_opaque_attack(1000, 100, 15)
    assert r.success_prob == 2.0 ** -15
    assert r.fraction_exposed == 0.15
    r = repeated_key_opaque_attack(1000, 100, 100)
    assert (r.success_prob, r.fraction_exposed) == (2.0 ** -100, 1.0)
    with pytest.raises(QubitError):
        repeated_key_opaque_attack(1000, 30, 3)


def test_block_guessing_monte_carlo():
    rep = opaque_attack_mc(100, 10, 3, 10 ** 5, seed=8)
    assert abs(rep.estimates["success_freq"] - 0.125) < 3 * rep.estimates["success_sigma"]
    assert rep.counts["user_errors_on_success"] == 0
    assert rep.counts["eve_errors_on_success"] == 0


def test_code_rate_window():
    w = code_rate_window(0.05)
    assert w.low == pytest.approx(0.39015969528359956, abs=1e-12)
    assert w.high == pytest.approx(0.7136030428840438, abs=1e-12)
    assert code_rate_window(0.15).empty and code_rate_window(0.2).empty
    w0 = code_rate_window(0.0)
    assert (round(w0.low, 4), w0.high) == (0.3902, 1.0)
