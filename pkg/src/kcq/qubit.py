"""Qubit KCQ: M keyed bases on one Bloch great circle.

Geometry. Basis j (0 <= j < M) is the antipodal pair at Bloch angles
pi*j/M and pi*j/M + pi. The running key picks the basis of every qubit
(log2 M key bits per qubit), so Bob always measures in the right basis.

Bit assignment alternates with the basis index: in basis j the state at
angle pi*j/M carries bit j mod 2. For M = 2 this is the familiar
four-state set; for large M neighbouring ring points carry opposite bits,
which is what drives a key-less eavesdropper toward a coin flip.

Eve's measurement is a projective basis given by a Hilbert-space angle
theta, i.e. Bloch direction 2*theta. Two attack models are evaluated:

* ``key_after=True``: Eve is handed the running key after measuring and
  makes the per-basis maximum-likelihood bit decision. This is the bound
  used for code-rate design (Breidbart error sin^2(pi/8) at M = 2).
* ``key_after=False``: the collective attack proper, where Eve never learns
  the basis and decides from the basis-averaged states.

The reduction from general POVMs to projective measurements for this binary
qubit decision is assumed, not re-derived; the tests include an out-of-plane
sweep as a sanity check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .keystream import KeyMaterial
from .measures import binary_entropy
from .trial import TrialReport, binomial_sigma

BREIDBART_ERROR = math.sin(math.pi / 8) ** 2
EVE_THRESHOLD = 0.15  # rounded Breidbart error used for the code-rate window


class QubitError(ValueError):
    pass


def _check_m(M: int) -> None:
    if M < 2:
        raise QubitError(f"need at least two bases, got M={M}")


@dataclass(frozen=True)
class QubitSignalSet:
    M: int

    def __post_init__(self):
        _check_m(self.M)

    def bit0_angle(self, j) -> np.ndarray:
        """Bloch angle of the bit-0 state of basis j."""
        j = np.asarray(j)
        return np.pi * j / self.M + np.pi * (j % 2)

    def bloch_angle(self, j, bit) -> np.ndarray:
        return self.bit0_angle(j) + np.pi * np.asarray(bit)

    def ket(self, j: int, bit: int) -> np.ndarray:
        phi = float(self.bloch_angle(j, bit))
        return np.array([math.cos(phi / 2), math.sin(phi / 2)])

    def states(self) -> np.ndarray:
        """All 2M kets, row (2j + b) holding basis j, bit b."""
        return np.array([self.ket(j, b) for j in range(self.M) for b in (0, 1)])

    def key_averaged_density(self, j: int) -> np.ndarray:
        """Density operator of basis j averaged over a uniform data bit."""
        kets = [self.ket(j, b) for b in (0, 1)]
        return 0.5 * sum(np.outer(k, k) for k in kets)


@dataclass(frozen=True)
class EveMeasurement:
    theta: float  # Hilbert-space angle of the basis, in [0, pi)

    def __post_init__(self):
        if not 0.0 <= self.theta < math.pi:
            raise QubitError(f"theta={self.theta} outside [0, pi)")

    @classmethod
    def breidbart(cls) -> "EveMeasurement":
        return cls(math.pi / 8)


def eve_collective_error(M: int, theta, key_after: bool = True):
    """Eve's average bit error for a fixed measurement at Hilbert angle theta.

    Averaged over a uniform basis and data bit. Vectorized over theta.
    """
    _check_m(M)
    sig = QubitSignalSet(M)
    theta = np.asarray(theta, dtype=float)
    # projection of each basis' bit-0 Bloch vector onto Eve's axis
    c = np.cos(sig.bit0_angle(np.arange(M))[:, None] - 2.0 * theta.reshape(1, -1))
    if key_after:
        err = 0.5 * (1.0 - np.abs(c)).mean(axis=0)
    else:
        err = 0.5 * (1.0 - np.abs(c.mean(axis=0)))
    return err.reshape(theta.shape) if theta.ndim else float(err[0])


def _golden_min(f, lo: float, hi: float, tol: float = 1e-13) -> float:
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


@dataclass(frozen=True)
class EveOptimum:
    theta: float
    error: float
    optima: tuple  # every distinct optimal basis orientation in [0, pi/2)


def optimize_eve_basis(M: int, key_after: bool = True, grid: int = 4096) -> EveOptimum:
    """Grid search over basis orientations, then golden-section refinement."""
    _check_m(M)
    period = math.pi / 2  # theta and theta + pi/2 describe the same basis
    thetas = np.arange(grid) * (period / grid)
    errs = eve_collective_error(M, thetas, key_after)
    best = float(errs.min())
    step = period / grid
    f = lambda t: eve_collective_error(M, t % math.pi, key_after)
    optima = []
    # refine every grid-local minimum that is within reach of the global best
    left, right = np.roll(errs, 1), np.roll(errs, -1)
    candidates = np.nonzero((errs <= left) & (errs <= right) & (errs <= best + 1e-3))[0]
    for i in candidates:
        t = _golden_min(f, thetas[i] - step, thetas[i] + step)
        optima.append((t % period, f(t)))
    err_star = min(e for _, e in optima)
    keep = sorted(t for t, e in optima if e <= err_star + 1e-9)
    # merge orientations that coincide modulo the period
    distinct = []
    for t in keep:
        if not any(abs(t - u) < 1e-6 or abs(abs(t - u) - period) < 1e-6 for u in distinct):
            distinct.append(t)
    return EveOptimum(theta=float(distinct[0]), error=float(err_star), optima=tuple(float(t) for t in distinct))


def _basis_indices(key: KeyMaterial, n: int, M: int) -> np.ndarray:
    bits_per = int(round(math.log2(M)))
    if 1 << bits_per != M:
        raise QubitError(f"M={M} must be a power of two to draw bases from key bits")
    raw = key.running(n * bits_per).reshape(n, bits_per).astype(np.int64)
    weights = 1 << np.arange(bits_per - 1, -1, -1)
    return raw @ weights


@dataclass
class QubitRun:
    alice: np.ndarray
    bob: np.ndarray
    eve: np.ndarray | None
    bases: np.ndarray


def run_qubits(n: int, M: int, key: KeyMaterial, p_c: float, eve: EveMeasurement | None,
               seed: int, shards: int = 8, eve_key_after: bool = True) -> QubitRun:
    """Alice's bits, Bob's channel-noisy keyed decisions and Eve's decisions.

    Qubit ranges are split into ``shards`` with independent generators
    spawned from ``seed``; results depend only on (seed, shards).
    """
    if not 0.0 <= p_c < 0.5:
        raise QubitError(f"channel error {p_c} outside [0, 0.5)")
    if n < 0:
        raise QubitError("n must be nonnegative")
    sig = QubitSignalSet(M)
    bases = _basis_indices(key, n, M)
    if eve is not None and not eve_key_after:
        no_key_axis = np.cos(sig.bit0_angle(np.arange(M)) - 2 * eve.theta).sum()
    alice = np.empty(n, dtype=np.uint8)
    bob = np.empty(n, dtype=np.uint8)
    eve_bits = np.empty(n, dtype=np.uint8) if eve is not None else None
    bounds = np.linspace(0, n, shards + 1).astype(int)
    for rng, lo, hi in zip((np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(shards)),
                           bounds[:-1], bounds[1:]):
        size = hi - lo
        j = bases[lo:hi]
        x = rng.integers(0, 2, size, dtype=np.uint8)
        flips = rng.random(size) < p_c
        alice[lo:hi] = x
        bob[lo:hi] = x ^ flips
        if eve is not None:
            phi = sig.bloch_angle(j, x)
            plus = rng.random(size) < 0.5 * (1.0 + np.cos(phi - 2 * eve.theta))
            if eve_key_after:
                axis = np.cos(sig.bit0_angle(j) - 2 * eve.theta)
                says_zero = np.where(axis >= 0, plus, ~plus)
            else:
                says_zero = plus if no_key_axis >= 0 else ~plus
            eve_bits[lo:hi] = (~says_zero).astype(np.uint8)
    return QubitRun(alice, bob, eve_bits, bases)


def simulate_protocol(n: int, M: int, key: KeyMaterial, p_c: float, eve: EveMeasurement | None = None,
                      seed: int = 0, shards: int = 8, eve_key_after: bool = True) -> TrialReport:
    run = run_qubits(n, M, key, p_c, eve, seed, shards, eve_key_after)
    bob_errs = int(np.count_nonzero(run.alice != run.bob))
    report = TrialReport(
        experiment="qubit",
        params={"n": n, "M": M, "p_c": p_c, "shards": shards,
                "theta": None if eve is None else eve.theta, "eve_key_after": eve_key_after},
        counts={"qubits": n, "bob_errors": bob_errs, "key_bits_used": key.consumed},
        estimates={"bob_error": bob_errs / n if n else 0.0,
                   "bob_sigma": binomial_sigma(p_c, n)},
        analytic={"bob_error": p_c},
        seed=seed,
    )
    if eve is not None:
        eve_errs = int(np.count_nonzero(run.alice != run.eve))
        ref = eve_collective_error(M, eve.theta, eve_key_after)
        report.counts["eve_errors"] = eve_errs
        report.estimates["eve_error"] = eve_errs / n if n else 0.0
        report.estimates["eve_sigma"] = binomial_sigma(ref, n)
        report.analytic["eve_error"] = ref
    return report


@dataclass(frozen=True)
class OpaqueAttack:
    success_prob: float
    fraction_exposed: float


def repeated_key_opaque_attack(n: int, m: int, j: int) -> OpaqueAttack:
    """Guess the key bits of j of the m repeated blocks and intercept/resend them.

    Success (all j guesses right) has probability 2**-j and exposes j/m of the
    data without disturbing the users.
    """
    if m < 1 or n % m:
        raise QubitError(f"m={m} must divide n={n}")
    if not 1 <= j <= m:
        raise QubitError(f"need 1 <= j <= m, got j={j}")
    return OpaqueAttack(math.ldexp(1.0, -j), j / m)


def opaque_attack_mc(n: int, m: int, j: int, trials: int, seed: int = 0) -> TrialReport:
    """Monte-Carlo of the block-guessing intercept/resend attack at M = 2.

    Each trial draws a fresh m-bit key spread over n qubits in contiguous
    blocks. Eve guesses the basis bits of the first j blocks, measures those
    qubits in her guessed bases and resends what she saw.
    """
    ref = repeated_key_opaque_attack(n, m, j)
    rng = np.random.default_rng(seed)
    block = n // m
    keys = rng.integers(0, 2, (trials, m), dtype=np.uint8)
    guesses = rng.integers(0, 2, (trials, j), dtype=np.uint8)
    right = guesses == keys[:, :j]
    success = right.all(axis=1)
    # attacked qubits: j blocks of `block` qubits each
    data = rng.integers(0, 2, (trials, j, block), dtype=np.uint8)
    # wrong basis: Eve's result and thus the resent state is random for Bob
    coin = rng.integers(0, 2, (trials, j, block), dtype=np.uint8)
    eve_seen = np.where(right[:, :, None], data, coin)
    resend_coin = rng.integers(0, 2, (trials, j, block), dtype=np.uint8)
    bob_seen = np.where(right[:, :, None], eve_seen, resend_coin)
    user_errs = (bob_seen != data).sum(axis=(1, 2))
    eve_wrong = (eve_seen != data).sum(axis=(1, 2))
    n_succ = int(success.sum())
    freq = n_succ / trials
    return TrialReport(
        experiment="opaque",
        params={"n": n, "m": m, "j": j, "trials": trials},
        counts={"successes": n_succ,
                "user_errors_on_success": int(user_errs[success].sum()),
                "eve_errors_on_success": int(eve_wrong[success].sum())},
        estimates={"success_freq": freq, "success_sigma": binomial_sigma(ref.success_prob, trials),
                   "induced_error_rate": float(user_errs.sum() / (trials * j * block))},
        analytic={"success_prob": ref.success_prob, "fraction_exposed": ref.fraction_exposed},
        seed=seed,
    )


@dataclass(frozen=True)
class RateWindow:
    low: float
    high: float

    @property
    def empty(self) -> bool:
        return not self.high > self.low


def code_rate_window(p_c: float, eve_error: float = EVE_THRESHOLD) -> RateWindow:
    """Code rates R with 1 - h2(eve_error) < R < 1 - h2(p_c)."""
    if not 0.0 <= p_c <= 0.5:
        raise QubitError(f"p_c={p_c} outside [0, 0.5]")
    return RateWindow(1.0 - binary_entropy(eve_error), 1.0 - binary_entropy(p_c))
