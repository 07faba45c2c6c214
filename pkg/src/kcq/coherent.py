"""Binary coherent-state KCQ on a phase ring.

Receivers compared for an antipodal pair |alpha0>, |-alpha0> with photon
number S = alpha0**2:

* optimum quantum (Helstrom) receiver, exact 1/2 (1 - sqrt(1 - exp(-4S)));
* heterodyne, outcome y = alpha + w with w circular complex Gaussian of
  variance 1/2 per quadrature, sign decision, error Q(sqrt(2S));
* canonical phase measurement, error = phase mass outside (-pi/2, pi/2).

The heterodyne noise convention is shared with :mod:`kcq.cppm`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .trial import TrialReport, binomial_sigma

TAIL_TOL = 1e-12


class CoherentError(ValueError):
    pass


def _check_s(S: float) -> None:
    if S < 0 or not math.isfinite(S):
        raise CoherentError(f"photon number must be finite and >= 0, got {S}")


@dataclass(frozen=True)
class PhaseRingConstellation:
    """M coherent states alpha0 * exp(2 pi i l / M), single- or two-mode.

    Bit of ring point l is (l mod 2) xor (l >= M/2), so each antipodal pair
    (l, l + M/2) carries opposite bits and neighbours alternate.
    """

    M: int
    alpha0: float
    two_mode: bool = False

    def __post_init__(self):
        if self.M < 2 or self.M % 2:
            raise CoherentError(f"M must be even and >= 2, got {self.M}")
        if self.alpha0 < 0:
            raise CoherentError("alpha0 must be nonnegative")

    @property
    def S(self) -> float:
        return self.alpha0 ** 2

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.M) / self.M

    def amplitudes(self) -> np.ndarray:
        """Shape (M,) complex for one mode, (M, 2) real pairs for two modes."""
        th = self.angles
        if self.two_mode:
            return self.alpha0 * np.stack([np.cos(th), np.sin(th)], axis=1)
        return self.alpha0 * np.exp(1j * th)

    def bits(self) -> np.ndarray:
        l = np.arange(self.M)
        return (l % 2) ^ (l >= self.M // 2)

    def antipode(self, l: int) -> int:
        return (l + self.M // 2) % self.M


def helstrom_binary_error(S: float) -> float:
    """Optimum error for equiprobable |alpha0>, |-alpha0>."""
    _check_s(S)
    x = math.exp(-4.0 * S)
    # 1/2 (1 - sqrt(1 - x)) without cancellation
    return x / (2.0 * (1.0 + math.sqrt(1.0 - x)))


def log_helstrom_binary_error(S: float) -> float:
    _check_s(S)
    x = math.exp(-4.0 * S)
    return -4.0 * S - math.log(2.0 * (1.0 + math.sqrt(1.0 - x)))


def helstrom_asymptote(S: float) -> float:
    return 0.25 * math.exp(-4.0 * S)


def heterodyne_asymptote(S: float) -> float:
    return 0.5 * math.exp(-S)


def phase_asymptote(S: float) -> float:
    return 0.5 * math.exp(-2.0 * S)


def heterodyne_analytic(S: float) -> float:
    _check_s(S)
    return float(special.ndtr(-math.sqrt(2.0 * S)))


def log_heterodyne_analytic(S: float) -> float:
    _check_s(S)
    return float(special.log_ndtr(-math.sqrt(2.0 * S)))


def heterodyne_samples(amplitude, size, rng: np.random.Generator) -> np.ndarray:
    """Heterodyne outcomes for coherent amplitude(s): alpha + CN(0, 1)."""
    noise = rng.normal(0.0, math.sqrt(0.5), size) + 1j * rng.normal(0.0, math.sqrt(0.5), size)
    return amplitude + noise


@dataclass(frozen=True)
class HeterodyneResult:
    analytic: float
    mc: float | None = None
    sigma: float | None = None
    trials: int = 0


def heterodyne_binary_error(S: float, mc_trials: int | None = None, seed: int = 0,
                            shards: int = 4) -> HeterodyneResult:
    """Q(sqrt(2S)) and, optionally, a sign-decision Monte-Carlo estimate."""
    analytic = heterodyne_analytic(S)
    if not mc_trials:
        return HeterodyneResult(analytic)
    alpha = math.sqrt(S)
    errors = 0
    bounds = np.linspace(0, mc_trials, shards + 1).astype(int)
    for ss, lo, hi in zip(np.random.SeedSequence(seed).spawn(shards), bounds[:-1], bounds[1:]):
        rng = np.random.default_rng(ss)
        bits = rng.integers(0, 2, hi - lo)
        sent = np.where(bits == 0, alpha, -alpha)
        y = heterodyne_samples(sent, hi - lo, rng)
        errors += int(np.count_nonzero((y.real < 0) != (bits == 1)))
    return HeterodyneResult(analytic, errors / mc_trials, binomial_sigma(analytic, mc_trials), mc_trials)


def default_cutoff(S: float) -> int:
    return int(math.ceil(10 * S + 50))


def fock_amplitudes(S: float, n_max: int) -> np.ndarray:
    """Real Fock coefficients of |sqrt(S)> up to n_max, with a tail-mass check."""
    _check_s(S)
    if n_max < default_cutoff(S):
        raise CoherentError(f"cutoff {n_max} below the adequacy rule 10 S + 50 = {default_cutoff(S)}")
    tail = float(stats.poisson.sf(n_max, S)) if S > 0 else 0.0
    if tail > TAIL_TOL:
        raise CoherentError(f"Fock tail mass {tail:.3g} beyond n_max={n_max}")
    n = np.arange(n_max + 1)
    if S == 0:
        return (n == 0).astype(float)
    return np.exp(-S / 2 + n * 0.5 * math.log(S) - 0.5 * special.gammaln(n + 1))


def _overlaps(c: np.ndarray) -> np.ndarray:
    """A_k = sum_n c_n c_{n+k} for k = 0 .. len(c)-1."""
    full = np.correlate(c, c, mode="full")
    return full[c.size - 1:]


def phase_distribution(S: float, theta, n_max: int | None = None) -> np.ndarray:
    """Canonical phase density |<theta|alpha>|^2 with <theta| = sum e^{-i n theta} <n| / sqrt(2 pi)."""
    n_max = n_max or default_cutoff(S)
    c = fock_amplitudes(S, n_max)
    a = _overlaps(c)
    theta = np.asarray(theta, dtype=float)
    k = np.arange(1, a.size)
    dens = (a[0] + 2.0 * np.cos(np.multiply.outer(theta, k)) @ a[1:]) / (2 * np.pi)
    return np.maximum(dens, 0.0)


def phase_measurement_error(S: float, n_max: int | None = None) -> float:
    """Phase mass with |theta| > pi/2, from the exact Fourier series.

    P = 1/2 - (2/pi) sum_{k odd} (-1)^((k-1)/2) A_k / k.
    """
    n_max = n_max or default_cutoff(S)
    a = _overlaps(fock_amplitudes(S, n_max))
    k = np.arange(1, a.size, 2)
    signs = np.where((k - 1) // 2 % 2 == 0, 1.0, -1.0)
    val = 0.5 - (2.0 / np.pi) * float(np.sum(signs * a[k] / k))
    return max(val, 0.0)


def phase_rms(S: float, n_max: int | None = None) -> float:
    """Root-mean-square phase deviation over (-pi, pi]."""
    n_max = n_max or default_cutoff(S)
    a = _overlaps(fock_amplitudes(S, n_max))
    k = np.arange(1, a.size)
    # int theta^2 cos(k theta) over (-pi, pi] = 4 pi (-1)^k / k^2
    var = np.pi ** 2 / 3 + 4.0 * float(np.sum((-1.0) ** k * a[k] / k ** 2))
    return math.sqrt(max(var, 0.0))


def phase_measurement_mc(S: float, trials: int, seed: int = 0, grid: int = 1 << 14) -> HeterodyneResult:
    """Sample canonical-phase outcomes from the tabulated density and count bit errors."""
    rng = np.random.default_rng(seed)
    edges = np.linspace(-np.pi, np.pi, grid + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    w = phase_distribution(S, mids) * (edges[1] - edges[0])
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(trials), side="right")
    theta = mids[np.minimum(idx, grid - 1)]
    errs = int(np.count_nonzero(np.abs(theta) > np.pi / 2))
    ref = phase_measurement_error(S)
    return HeterodyneResult(ref, errs / trials, binomial_sigma(ref, trials), trials)


@dataclass(frozen=True)
class AdvantageRow:
    S: float
    optimal: float
    phase: float
    heterodyne: float
    per_bits: int = 10 ** 9

    @property
    def counts(self) -> tuple[float, float, float]:
        return (self.optimal * self.per_bits, self.phase * self.per_bits, self.heterodyne * self.per_bits)

    @property
    def ordered(self) -> bool:
        return self.optimal <= self.phase <= self.heterodyne


def advantage_table(S: float, per_bits: int = 10 ** 9) -> AdvantageRow:
    """Bob's optimum receiver versus Eve's phase and heterodyne receivers at one S."""
    return AdvantageRow(S, helstrom_binary_error(S), phase_measurement_error(S), heterodyne_analytic(S), per_bits)


def decay_rate(log_fn, S: float, h: float = 1e-4) -> float:
    """Local error exponent -d ln P / dS by central difference."""
    h = h * max(S, 1.0)
    return -(log_fn(S + h) - log_fn(S - h)) / (2 * h)


def log_phase_error(S: float) -> float:
    return math.log(phase_measurement_error(S))


@dataclass(frozen=True)
class GapRow:
    S: float
    optimal: float
    heterodyne: float
    log_ratio: float  # ln P_opt / ln P_het
    exponent_ratio: float  # ratio of local decay rates


def six_db_gap_check(S_grid) -> list[GapRow]:
    """Error-exponent ratio of the optimum receiver over heterodyne; 4 means 6 dB."""
    rows = []
    for S in S_grid:
        if S <= 0:
            raise CoherentError("exponents need S > 0")
        lo, lh = log_helstrom_binary_error(S), log_heterodyne_analytic(S)
        ratio = decay_rate(log_helstrom_binary_error, S) / decay_rate(log_heterodyne_analytic, S)
        rows.append(GapRow(S, math.exp(lo), math.exp(lh), lo / lh, ratio))
    return rows


def ring_eve_without_key_mc(S: float, M: int, trials: int, seed: int = 0) -> TrialReport:
    """Eve heterodynes one ring state without the key and guesses the bit.

    Posterior bit probabilities sum the Gaussian likelihoods of every ring
    point with that bit. This is an empirical estimator only; no bound on
    the whole-string guessing probability is claimed from it.
    """
    ring = PhaseRingConstellation(M, math.sqrt(S))
    rng = np.random.default_rng(seed)
    amps = ring.amplitudes()
    bits = ring.bits()
    sent = rng.integers(0, M, trials)
    y = heterodyne_samples(amps[sent], trials, rng)
    # log-likelihood up to a common term: -|y - a_l|^2
    ll = -np.abs(y[:, None] - amps[None, :]) ** 2
    ll -= ll.max(axis=1, keepdims=True)
    lik = np.exp(ll)
    p1 = lik[:, bits == 1].sum(axis=1) / lik.sum(axis=1)
    guess = (p1 > 0.5).astype(int)
    err = float(np.mean(guess != bits[sent]))
    return TrialReport(
        experiment="ring_no_key",
        params={"S": S, "M": M, "trials": trials},
        counts={"errors": int(round(err * trials))},
        estimates={"bit_error": err, "sigma": binomial_sigma(err, trials),
                   "mean_max_posterior": float(np.mean(np.maximum(p1, 1 - p1)))},
        analytic={"keyed_heterodyne_error": heterodyne_analytic(S)},
        seed=seed,
    )
