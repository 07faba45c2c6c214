"""Coherent pulse-position modulation with a keyed mode scrambler.

Message i in {0, .., N-1} is a coherent pulse of photon number S in mode i
and vacuum elsewhere. A key-derived N x N unitary U mixes the modes before
transmission, so the transmitted amplitude vector is sqrt(S) U[:, i].

Bob undoes U and counts photons. Eve heterodynes every mode (noise CN(0, 1)
per mode, as in :mod:`kcq.coherent`); once the key is handed to her she
rotates her outcome back, z = U^H y, and picks argmax_j Re z_j. Since the
log-likelihood of message j is 2 sqrt(S) Re z_j + const, her posterior over
messages is a softmax of 2 sqrt(S) Re z.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .keystream import POLY_127, KeystreamError, Lfsr, key_from_int, parse_bits
from .trial import TrialReport, binomial_sigma

MAX_MODES = 1 << 10
UNITARY_TOL = 1e-10
_ANGLE_BITS = 24
_ZERO_MEAN = 1e-20


class CppmError(ValueError):
    pass


def _check_modes(N: int) -> int:
    if N < 2 or N > MAX_MODES or N & (N - 1):
        raise CppmError(f"N must be a power of two in [2, {MAX_MODES}], got {N}")
    return N.bit_length() - 1


def keygen_rate(N: int) -> int:
    """Key bits generated per use with N equiprobable messages."""
    return _check_modes(N)


def _key_seed(key) -> np.ndarray:
    """Register seed for the scrambler, whitened from the 127-bit key.

    The trinomial register spreads a low-weight seed very slowly, so the key
    is passed through SHA-256 first; the result is still a function of the
    key alone.
    """
    if isinstance(key, (int, np.integer)):
        bits = key_from_int(int(key), 127)
    else:
        bits = parse_bits(key)
        if bits.size != 127:
            raise KeystreamError(f"scrambler key must have 127 bits, got {bits.size}")
        if not bits.any():
            raise KeystreamError("all-zero key")
    digest = hashlib.sha256(b"cppm-scrambler" + np.packbits(bits).tobytes()).digest()
    seed = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))[:127]
    if not seed.any():
        seed[0] = 1
    return seed


def _uniforms(stream: Lfsr, count: int) -> np.ndarray:
    raw = stream.take(count * _ANGLE_BITS).reshape(count, _ANGLE_BITS).astype(np.float64)
    return raw @ (0.5 ** np.arange(1, _ANGLE_BITS + 1))


def build_scrambler(key, N: int) -> np.ndarray:
    """Keyed unitary from N-1 layers of Givens couplers plus a phase layer.

    Layer l couples every mode pair (a, a + h) with h = 2**(l mod n) and bit
    h of a clear, i.e. butterfly stages cycled over all strides, so every
    entry is populated after n layers. Each coupler has a mixing angle in
    [0, pi/2) and a phase in [0, 2 pi), read from the degree-127 LFSR seeded
    by the key; the matrix therefore depends on the key alone.
    """
    n = _check_modes(N)
    seed = _key_seed(key)
    cache_key = (np.packbits(seed).tobytes(), N)
    if cache_key not in _SCRAMBLERS:
        _SCRAMBLERS[cache_key] = _build(seed, N, n)
    return _SCRAMBLERS[cache_key].copy()


_SCRAMBLERS: dict = {}


def _build(seed: np.ndarray, N: int, n: int) -> np.ndarray:
    stream = Lfsr(POLY_127, seed)
    U = np.eye(N, dtype=np.complex128)
    half = N // 2
    for layer in range(N - 1):
        h = 1 << (layer % n)
        view = U.reshape(N // (2 * h), 2, h, N)
        u = _uniforms(stream, 2 * half).reshape(2, N // (2 * h), h, 1)
        c = np.cos(0.5 * np.pi * u[0])
        s = np.sin(0.5 * np.pi * u[0])
        ph = np.exp(2j * np.pi * u[1])
        ra = view[:, 0].copy()
        rb = view[:, 1]
        view[:, 0] = c * ra - (s * ph) * rb
        view[:, 1] = (s * np.conj(ph)) * ra + c * rb
    U *= np.exp(2j * np.pi * _uniforms(stream, N))[:, None]
    if unitarity_defect(U) > UNITARY_TOL:
        raise CppmError("scrambler lost unitarity")
    return U


def unitarity_defect(U: np.ndarray) -> float:
    return float(np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0])))


@dataclass
class CppmConstellation:
    N: int
    S: float
    key: object = 1
    U: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_modes(self.N)
        if self.S < 0:
            raise CppmError("S must be nonnegative")
        self.U = build_scrambler(self.key, self.N)

    @property
    def n(self) -> int:
        return self.N.bit_length() - 1

    def unscrambled(self, i: int) -> np.ndarray:
        v = np.zeros(self.N, dtype=np.complex128)
        v[i] = math.sqrt(self.S)
        return v

    def signal(self, i) -> np.ndarray:
        """Transmitted amplitudes; an index array gives one column per message."""
        return math.sqrt(self.S) * self.U[:, i]

    def energies(self) -> np.ndarray:
        return self.S * np.sum(np.abs(self.U) ** 2, axis=0)


def direct_detection_error(N: int, S: float) -> float:
    """Exact block error of unscramble-then-count: (1 - 1/N) e^{-S}."""
    _check_modes(N)
    return (1.0 - 1.0 / N) * math.exp(-S)


def _shards(trials: int, shards: int, seed: int):
    bounds = np.linspace(0, trials, shards + 1).astype(int)
    seqs = np.random.SeedSequence(seed).spawn(shards)
    for ss, lo, hi in zip(seqs, bounds[:-1], bounds[1:]):
        if hi > lo:
            yield np.random.default_rng(ss), hi - lo


def _count_decisions(counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Mode with the most counts; uniform guess where nothing clicked."""
    decided = np.argmax(counts, axis=0)
    dark = counts.max(axis=0) == 0
    decided[dark] = rng.integers(0, counts.shape[0], int(dark.sum()))
    return decided


def bob_direct_detect(i: int, const: CppmConstellation, rng: np.random.Generator) -> int:
    """Bob's decision for one use carrying message i."""
    return int(bob_detect_batch(const, np.array([i]), rng)[0])


def bob_detect_batch(const: CppmConstellation, sent: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    back = const.U.conj().T @ const.signal(sent)
    mean = np.abs(back) ** 2
    mean[mean < _ZERO_MEAN] = 0.0  # modes without the pulse stay dark
    return _count_decisions(rng.poisson(mean), rng)


def heterodyne_outcomes(amplitudes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    shape = amplitudes.shape
    s = math.sqrt(0.5)
    return amplitudes + rng.normal(0, s, shape) + 1j * rng.normal(0, s, shape)


@dataclass
class EveBatch:
    decisions: np.ndarray
    posteriors: np.ndarray | None  # (trials, N), rows sum to one


def eve_heterodyne_batch(const: CppmConstellation, sent: np.ndarray, rng: np.random.Generator,
                         key_granted_after: bool = True, keep_posteriors: bool = False) -> EveBatch:
    """Heterodyne all modes, then matched-filter decide.

    Without the key Eve can only match against the unscrambled pulse
    positions, so she filters y itself.
    """
    y = heterodyne_outcomes(const.signal(sent), rng)
    z = const.U.conj().T @ y if key_granted_after else y
    score = z.real
    decisions = np.argmax(score, axis=0)
    post = None
    if keep_posteriors:
        post = special.softmax(2.0 * math.sqrt(const.S) * score, axis=0).T
    return EveBatch(decisions, post)


def eve_heterodyne_attack(i: int, const: CppmConstellation, rng: np.random.Generator,
                          key_granted_after: bool = True) -> tuple[int, np.ndarray]:
    """Decision and posterior CPD over messages for one use carrying message i."""
    out = eve_heterodyne_batch(const, np.array([i]), rng, key_granted_after, keep_posteriors=True)
    return int(out.decisions[0]), out.posteriors[0]


def heterodyne_error_lower_bound(n: int, S: float, y: float, competitors: int | None = None) -> float:
    """Eve's block error is at least (1 - Phi(y)^K) Phi(y - sqrt(2S)).

    With the statistic scaled to unit noise, the sent message scores
    N(sqrt(2S), 1) and each of K = competitors wrong messages N(0, 1); an
    error is certain when some wrong score beats y while the right one falls
    below y. K defaults to 2**n - 1.
    """
    if n < 1:
        raise CppmError("n must be >= 1")
    K = (1 << n) - 1 if competitors is None else competitors
    log_all_below = K * float(special.log_ndtr(y))
    return float(-np.expm1(log_all_below) * special.ndtr(y - math.sqrt(2.0 * S)))


def optimize_bound(n: int, S: float, competitors: int | None = None,
                   step: float = 1e-3) -> tuple[float, float]:
    """Grid maximum of the heterodyne error bound over y; returns (y, bound)."""
    K = (1 << n) - 1 if competitors is None else competitors
    hi = max(math.sqrt(2.0 * n), math.sqrt(2.0 * math.log(max(K, 2))), math.sqrt(2.0 * S)) + 8.0
    ys = np.arange(-6.0, hi, step)
    vals = -np.expm1(K * special.log_ndtr(ys)) * special.ndtr(ys - math.sqrt(2.0 * S))
    k = int(np.argmax(vals))
    return float(ys[k]), float(vals[k])


def simulate_cppm(N: int, S: float, trials: int, seed: int = 0, key=1, shards: int = 8,
                  key_granted_after: bool = True, eve: bool = True, bob: bool = True,
                  const: CppmConstellation | None = None) -> TrialReport:
    """Monte-Carlo block errors for Bob and for the heterodyne attacker."""
    const = const or CppmConstellation(N, S, key)
    n = const.n
    bob_errs = eve_errs = 0
    # bound memory: at most ~4M complex entries per batch
    per = max(1, (1 << 22) // N)
    for rng, size in _shards(trials, shards, seed):
        done = 0
        while done < size:
            m = min(per, size - done)
            sent = rng.integers(0, N, m)
            if bob:
                bob_errs += int(np.count_nonzero(bob_detect_batch(const, sent, rng) != sent))
            if eve:
                out = eve_heterodyne_batch(const, sent, rng, key_granted_after)
                eve_errs += int(np.count_nonzero(out.decisions != sent))
            done += m
    y_opt, bound = optimize_bound(n, S)
    exact = direct_detection_error(N, S)
    report = TrialReport(
        experiment="cppm",
        params={"N": N, "S": S, "trials": trials, "shards": shards, "key_granted_after": key_granted_after},
        counts={"trials": trials},
        estimates={},
        analytic={"bob_err_exact": exact, "eve_err_bound": bound, "eve_bound_y": y_opt, "keygen_rate": keygen_rate(N)},
        seed=seed,
    )
    if bob:
        report.counts["bob_errors"] = bob_errs
        report.estimates["bob_error"] = bob_errs / trials
        report.estimates["bob_sigma"] = binomial_sigma(exact, trials)
    if eve:
        report.counts["eve_errors"] = eve_errs
        p = eve_errs / trials
        report.estimates["eve_error"] = p
        report.estimates["eve_sigma"] = binomial_sigma(p, trials)
    return report


@dataclass(frozen=True)
class FlatProfile:
    N: int
    S: float
    trials: int
    error_events: int
    offset_counts: np.ndarray  # counts of (decided - sent) mod N for offsets 1..N-1
    chi2: float
    p_value: float
    mean_true_posterior: float
    mean_wrong_posterior: np.ndarray  # averaged posterior at offsets 1..N-1
    wrong_spread: float  # max relative deviation of the wrong entries from their mean
    mean_max_posterior: float  # empirical p1 calibration, not a bound


def flat_profile_test(N: int, S: float, trials: int, seed: int = 0, key=1,
                      min_expected: float = 5.0) -> FlatProfile:
    """Uniformity of Eve's wrong decisions over the N-1 wrong messages.

    Wrong decisions are recorded as offsets (decided - sent) mod N and tested
    with a chi-square goodness-of-fit test against the uniform law. The
    averaged posterior, arranged by offset, should have one spike at offset 0
    and equal mass at every other offset.
    """
    const = CppmConstellation(N, S, key)
    counts = np.zeros(N, dtype=np.int64)
    post_sum = np.zeros(N)
    max_sum = 0.0
    per = max(1, (1 << 20) // N)
    for rng, size in _shards(trials, 4, seed):
        done = 0
        while done < size:
            m = min(per, size - done)
            sent = rng.integers(0, N, m)
            out = eve_heterodyne_batch(const, sent, rng, True, keep_posteriors=True)
            counts += np.bincount((out.decisions - sent) % N, minlength=N)
            rows = np.arange(m)[:, None]
            aligned = out.posteriors[rows, (sent[:, None] + np.arange(N)) % N]
            post_sum += aligned.sum(axis=0)
            max_sum += float(out.posteriors.max(axis=1).sum())
            done += m
    wrong = counts[1:]
    events = int(wrong.sum())
    if N == 2:
        chi2, pval = 0.0, 1.0
    else:
        if events / (N - 1) < min_expected:
            raise CppmError(f"only {events} error events; need {min_expected} expected per wrong message")
        chi2, pval = stats.chisquare(wrong)
    mean_post = post_sum / trials
    w = mean_post[1:]
    spread = float(np.max(np.abs(w / w.mean() - 1.0))) if w.mean() > 0 else 0.0
    return FlatProfile(N, S, trials, events, wrong, float(chi2), float(pval), float(mean_post[0]), w,
                       spread, max_sum / trials)


def cppm_row(N: int, S: float, trials: int, seed: int = 0, key=1) -> dict:
    """One CSV row: N, S, bob_err, eve_err, bob_err_exact, eve_err_bound, chi2_p."""
    rep = simulate_cppm(N, S, trials, seed, key)
    try:
        chi2_p = flat_profile_test(N, S, trials, seed + 1, key).p_value
    except CppmError:
        chi2_p = float("nan")
    return {"N": N, "S": S, "bob_err": rep.estimates["bob_error"], "eve_err": rep.estimates["eve_error"],
            "bob_err_exact": rep.analytic["bob_err_exact"], "eve_err_bound": rep.analytic["eve_err_bound"], "chi2_p": chi2_p}
