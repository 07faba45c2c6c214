"""Attacker CPDs and the security measures computed from them.

A CPD is the attacker's posterior over the N = 2**n candidate values of an
n-bit string. Candidate index i is read MSB-first, so the "first m bits" of
a candidate are the top m bits of its index.

Small CPDs are held densely; the structured forms (``SpikeUniformCpd``,
``ProductBernoulliCpd``, ``SubsetCpd``) evaluate their measures in closed
form so that very long strings (n ~ 1e6) remain reachable.
"""

from __future__ import annotations

import itertools
import math
import struct
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

MASS_TOL = 1e-12
MAX_DENSE_BITS = 24


class CpdError(ValueError):
    """Raised for malformed CPDs or out-of-domain measure arguments."""


def binary_entropy(p: float) -> float:
    """h2(p) in bits, with h2(0) = h2(1) = 0."""
    if not 0.0 <= p <= 1.0:
        raise CpdError(f"probability out of range: {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def _log2_pow2_minus_one(n: int) -> float:
    # log2(2**n - 1) without forming 2**n
    return n + math.log1p(-math.ldexp(1.0, -n)) / math.log(2.0)


def _entropy_bits(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


def _log2_sum_exp2(log2_terms: Sequence[float]) -> float:
    terms = [t for t in log2_terms if t != -math.inf]
    if not terms:
        return -math.inf
    top = max(terms)
    return top + math.log2(math.fsum(2.0 ** (t - top) for t in terms))


def _exp2_or_inf(x: float) -> float:
    return math.inf if x > 1023 else 2.0 ** x


@dataclass(frozen=True)
class MeasureReport:
    p1: float
    shannon_entropy_bits: float
    mutual_info_bits: float
    variational_distance: float
    trial_complexity: float
    epsilon_uniform: float
    log2_trial_complexity: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class Cpd:
    """Base class; subclasses set ``n`` and implement ``measures``."""

    n: int

    @property
    def size(self) -> int:
        return 1 << self.n

    def measures(self) -> MeasureReport:
        raise NotImplementedError

    def to_dense(self) -> "DenseCpd":
        raise NotImplementedError


class DenseCpd(Cpd):
    def __init__(self, probabilities, n: int | None = None):
        p = np.asarray(probabilities, dtype=float)
        if p.ndim != 1:
            raise CpdError("dense CPD must be a flat vector")
        if n is None:
            n = int(round(math.log2(p.size))) if p.size > 0 else -1
        if n < 0 or p.size != (1 << n):
            raise CpdError(f"length {p.size} is not 2**n")
        if n > MAX_DENSE_BITS:
            raise CpdError(f"dense CPDs are capped at n = {MAX_DENSE_BITS}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise CpdError("probabilities must be finite and nonnegative")
        mass = float(np.sum(p))
        if abs(mass - 1.0) > MASS_TOL:
            raise CpdError(f"probability mass {mass!r} differs from 1")
        self.n = n
        self.p = p

    @classmethod
    def uniform(cls, n: int) -> "DenseCpd":
        return cls(np.full(1 << n, 1.0 / (1 << n)), n)

    @classmethod
    def point_mass(cls, n: int, index: int = 0) -> "DenseCpd":
        p = np.zeros(1 << n)
        p[index] = 1.0
        return cls(p, n)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, concentration: float = 1.0) -> "DenseCpd":
        """Dirichlet draw, renormalized exactly enough to pass validation."""
        p = rng.dirichlet(np.full(1 << n, concentration))
        return cls(p / p.sum(), n)

    def to_dense(self) -> "DenseCpd":
        return self

    def sorted_desc(self) -> np.ndarray:
        # stable: equal probabilities keep candidate-index order
        order = np.argsort(-self.p, kind="stable")
        return self.p[order]

    def measures(self) -> MeasureReport:
        N = self.size
        p = self.p
        h = _entropy_bits(p)
        ranks = np.arange(1, N + 1, dtype=float)
        ct = float(np.dot(ranks, self.sorted_desc()))
        return MeasureReport(
            p1=float(p.max()),
            shannon_entropy_bits=h,
            mutual_info_bits=self.n - h,
            variational_distance=0.5 * float(np.sum(np.abs(p - 1.0 / N))),
            trial_complexity=ct,
            epsilon_uniform=float(np.max(np.abs(p - 1.0 / N))),
            log2_trial_complexity=math.log2(ct),
        )

    def marginal(self, positions: Sequence[int]) -> np.ndarray:
        """Distribution of the bits at ``positions`` (0 = leading bit)."""
        positions = list(positions)
        if len(set(positions)) != len(positions) or any(not 0 <= q < self.n for q in positions):
            raise CpdError(f"bad bit positions {positions}")
        tensor = self.p.reshape((2,) * self.n)
        others = tuple(ax for ax in range(self.n) if ax not in positions)
        marg = tensor.sum(axis=others) if others else tensor
        kept = sorted(positions)
        marg = np.transpose(marg, [kept.index(q) for q in positions])
        return marg.reshape(-1)

    def best_subset_guess(self, positions: Sequence[int]) -> float:
        return float(self.marginal(positions).max())

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.n) + self.p.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DenseCpd":
        if len(blob) < 4:
            raise CpdError("truncated CPD blob")
        (n,) = struct.unpack_from("<I", blob)
        if n > MAX_DENSE_BITS:
            raise CpdError(f"dense CPDs are capped at n = {MAX_DENSE_BITS}")
        body = blob[4:]
        if len(body) != 8 * (1 << n):
            raise CpdError(f"expected {8 << n} payload bytes, got {len(body)}")
        return cls(np.frombuffer(body, dtype="<f8").astype(float), n)


class SpikeUniformCpd(Cpd):
    """Mass p1 on candidate 0, the rest spread evenly over the other N-1."""

    def __init__(self, n: int, p1: float):
        if n < 1:
            raise CpdError("n must be at least 1")
        if not math.ldexp(1.0, -n) * (1 - 1e-12) <= p1 <= 1.0:
            raise CpdError(f"p1={p1} outside [2**-n, 1]")
        self.n = n
        self.p1 = float(p1)

    @classmethod
    def from_level(cls, n: int, l: float) -> "SpikeUniformCpd":
        return cls(n, 2.0 ** (-l))

    def to_dense(self) -> DenseCpd:
        N = self.size
        p = np.full(N, (1.0 - self.p1) / (N - 1))
        p[0] = self.p1
        return DenseCpd(p, self.n)

    def measures(self) -> MeasureReport:
        n, p1 = self.n, self.p1
        inv_n = math.ldexp(1.0, -n)
        h = entropy_vs_p1_frontier(n, max(p1, inv_n))
        # C_t = p1 + r * (N(N+1)/2 - 1), r = (1-p1)/(N-1); logs keep large n finite
        if n <= 60:
            N = 1 << n
            ct = p1 + (1.0 - p1) / (N - 1) * (N * (N + 1) / 2 - 1)
            log2_ct = math.log2(ct)
        else:
            # r*(N(N+1)/2 - 1) = (1-p1)*(N+2)/2 exactly; N+2 ~ N here
            tail = math.log2(1.0 - p1) + n - 1 if p1 < 1.0 else -math.inf
            log2_ct = _log2_sum_exp2([math.log2(p1), tail])
            ct = _exp2_or_inf(log2_ct)
        return MeasureReport(
            p1=p1,
            shannon_entropy_bits=h,
            mutual_info_bits=n - h,
            variational_distance=p1 - inv_n,
            trial_complexity=ct,
            epsilon_uniform=p1 - inv_n,
            log2_trial_complexity=log2_ct,
        )


class ProductBernoulliCpd(Cpd):
    """Independent bits, each guessed correctly with probability p0."""

    def __init__(self, n: int, p0: float):
        if n < 1:
            raise CpdError("n must be at least 1")
        if not 0.5 <= p0 <= 1.0:
            raise CpdError(f"p0={p0} outside [1/2, 1]")
        self.n = n
        self.p0 = float(p0)

    def to_dense(self) -> DenseCpd:
        if self.n > MAX_DENSE_BITS:
            raise CpdError(f"dense CPDs are capped at n = {MAX_DENSE_BITS}")
        idx = np.arange(self.size)
        wrong = np.array([bin(i).count("1") for i in idx])
        p = self.p0 ** (self.n - wrong) * (1.0 - self.p0) ** wrong
        return DenseCpd(p / p.sum(), self.n)

    def measures(self) -> MeasureReport:
        n, p0 = self.n, self.p0
        q = 1.0 - p0
        p1 = p0 ** n
        inv_n = math.ldexp(1.0, -n)
        h = n * binary_entropy(p0)
        if p0 == 0.5:
            delta = 0.0
            k_star = n
        else:
            # strings with k wrong bits have probability p0^(n-k) q^k; those above 1/N
            # are exactly k <= k_star
            if q == 0.0:
                k_star = 0
            else:
                k_star = math.ceil(n * math.log(2 * p0) / (math.log(p0) - math.log(q))) - 1
            delta = float(stats.binom.cdf(k_star, n, q) - stats.binom.cdf(k_star, n, 0.5))
        p_min = q ** n
        log2_terms = []
        log2_before = -math.inf
        log_p0 = math.log2(p0)
        log_q = math.log2(q) if q > 0 else -math.inf
        lg = math.lgamma
        for k in range(n + 1):
            log2_cnt = (lg(n + 1) - lg(k + 1) - lg(n - k + 1)) / math.log(2.0)
            log_pk = (n - k) * log_p0 + (k * log_q if k else 0.0)
            if log_pk == -math.inf:
                break
            # the k-wrong group occupies ranks before+1 .. before+cnt
            log2_mean_rank = _log2_sum_exp2([log2_before, log2_cnt - 1 + math.log2(1 + 2.0 ** (-log2_cnt))])
            log2_terms.append(log_pk + log2_cnt + log2_mean_rank)
            log2_before = _log2_sum_exp2([log2_before, log2_cnt])
        log2_ct = _log2_sum_exp2(log2_terms)
        return MeasureReport(
            p1=p1,
            shannon_entropy_bits=h,
            mutual_info_bits=n - h,
            variational_distance=max(delta, 0.0),
            trial_complexity=_exp2_or_inf(log2_ct),
            epsilon_uniform=max(p1 - inv_n, inv_n - p_min),
            log2_trial_complexity=log2_ct,
        )


class SubsetCpd(Cpd):
    """Leading m bits fixed to zero with probability p, layout of the subset model.

    The first L = 2**(n-m) candidates carry p * q_i; every other candidate
    carries (1 - p) / (2**n - L). ``q`` defaults to uniform.
    """

    def __init__(self, n: int, m: int, p: float, q=None):
        if not 1 <= m <= n:
            raise CpdError(f"need 1 <= m <= n, got m={m}, n={n}")
        if not 0.0 <= p <= 1.0:
            raise CpdError(f"p={p} outside [0, 1]")
        if m == n and p < 1.0:
            # no candidates outside the fixed block
            raise CpdError("m == n leaves no room for the remaining mass")
        self.n, self.m, self.p = n, m, float(p)
        if q is not None:
            q = np.asarray(q, dtype=float)
            if q.size != 1 << (n - m) or np.any(q < 0) or abs(q.sum() - 1.0) > MASS_TOL:
                raise CpdError("q must be a distribution over 2**(n-m) values")
        self.q = q

    def to_dense(self) -> DenseCpd:
        N, L = self.size, 1 << (self.n - self.m)
        q = self.q if self.q is not None else np.full(L, 1.0 / L)
        p = np.empty(N)
        p[:L] = self.p * q
        if N > L:
            p[L:] = (1.0 - self.p) / (N - L)
        return DenseCpd(p, self.n)

    def measures(self) -> MeasureReport:
        if self.q is not None:
            return self.to_dense().measures()
        n, m, p = self.n, self.m, self.p
        inv_n = math.ldexp(1.0, -n)
        # log2 L, log2(N - L) = (n-m) + log2(2**m - 1)
        log2_l = n - m
        log2_rest = (n - m) + _log2_pow2_minus_one(m)
        log2_a = math.log2(p) - log2_l if p > 0 else -math.inf
        log2_b = math.log2(1.0 - p) - log2_rest if p < 1 else -math.inf
        h = binary_entropy(p) + p * log2_l + (1.0 - p) * log2_rest
        a, b = 2.0 ** log2_a, 2.0 ** log2_b
        # block masses are p and 1-p against uniform shares 2**-m and 1 - 2**-m
        delta = abs(p - 2.0 ** (-m))
        # C_t: the heavier block is tried first; each block's ranks form an arithmetic run
        blocks = sorted(
            [(log2_a, log2_l, math.log2(p) if p > 0 else -math.inf),
             (log2_b, log2_rest, math.log2(1.0 - p) if p < 1 else -math.inf)],
            key=lambda t: -t[0],
        )
        first, second = blocks
        # block mass * mean rank; mean rank of first = (cnt+1)/2, of second = cnt1 + (cnt2+1)/2
        log2_mean1 = first[1] - 1 + math.log2(1 + 2.0 ** (-first[1]))
        log2_mean2 = _log2_sum_exp2([first[1], second[1] - 1 + math.log2(1 + 2.0 ** (-second[1]))])
        log2_ct = _log2_sum_exp2([first[2] + log2_mean1, second[2] + log2_mean2])
        return MeasureReport(
            p1=max(a, b),
            shannon_entropy_bits=h,
            mutual_info_bits=n - h,
            variational_distance=delta,
            trial_complexity=_exp2_or_inf(log2_ct),
            epsilon_uniform=max(abs(a - inv_n), abs(b - inv_n)),
            log2_trial_complexity=log2_ct,
        )


def measure_all(cpd: Cpd) -> MeasureReport:
    return cpd.measures()


def entropy_vs_p1_frontier(n: int, p1: float) -> float:
    """Largest Shannon entropy any n-bit CPD with maximum probability p1 can have.

    F(p1) = h2(p1) + (1 - p1) log2(2**n - 1), attained by the spike-uniform CPD.
    """
    lo = math.ldexp(1.0, -n)
    if not lo * (1 - 1e-12) <= p1 <= 1.0:
        raise CpdError(f"p1={p1} outside [2**-{n}, 1]")
    return binary_entropy(min(max(p1, 0.0), 1.0)) + (1.0 - p1) * _log2_pow2_minus_one(n)


def information_bound_slack(n: int) -> float:
    """n / log2(2**n - 1) - 1."""
    return n / _log2_pow2_minus_one(n) - 1.0


def p1_lower_bound_from_information(n: int, l: float) -> float:
    """Worst-case whole-string guessing probability allowed by I_E/n <= 2**-l.

    Some CPD meeting the information constraint has p1 at least
    2**-l - (n / log2(2**n - 1) - 1).
    """
    if l > n:
        raise CpdError(f"l={l} exceeds n={n}")
    return 2.0 ** (-l) - information_bound_slack(n)


def max_p1_under_information(n: int, info_per_bit: float) -> float:
    """Largest p1 over all n-bit CPDs with I_E / n <= info_per_bit.

    Solves F(p1) = n (1 - info_per_bit); the spike-uniform CPD is extremal.
    """
    if info_per_bit < 0:
        raise CpdError("information must be nonnegative")
    target = n * (1.0 - info_per_bit)
    lo = math.ldexp(1.0, -n)
    if target <= 0:
        return 1.0
    if entropy_vs_p1_frontier(n, lo) <= target:
        return lo
    return optimize.brentq(lambda x: entropy_vs_p1_frontier(n, x) - target, lo, 1.0, xtol=1e-15, rtol=1e-14)


def entropy_floor(l: float) -> float:
    """Shannon entropy is at least l bits whenever p1 <= 2**-l."""
    if l < 0:
        raise CpdError("l must be nonnegative")
    return float(l)


def trial_floor(l: float) -> float:
    """Expected guesses are at least (2**l + 1) / 2 whenever p1 <= 2**-l."""
    if l < 0:
        raise CpdError("l must be nonnegative")
    return (2.0 ** l + 1.0) / 2.0


def equal_spike_cpd(n: int, l: int) -> DenseCpd:
    """2**l candidates at 2**-l each: the tight case for both lower bounds above."""
    if not 0 <= l <= n:
        raise CpdError(f"need 0 <= l <= n, got l={l}")
    p = np.zeros(1 << n)
    p[: 1 << l] = 2.0 ** (-l)
    return DenseCpd(p, n)


def subset_breach(n: int, m: int, p1: float) -> float:
    """Probability p ~ (n/m) p1 of recovering m chosen bits when I_E/n <= p1."""
    if not 1 <= m <= n:
        raise CpdError(f"need 1 <= m <= n, got m={m}, n={n}")
    if p1 < 0:
        raise CpdError("p1 must be nonnegative")
    if p1 > m / n * (1 + 1e-12):
        raise CpdError(f"p1={p1} exceeds m/n={m / n}; the subset estimate needs p1 <= m/n")
    if n - m < 4:
        warnings.warn(f"2**n is not much larger than 2**m (n={n}, m={m})", stacklevel=2)
    return min(1.0, n / m * p1)


def subset_model_cpd(n: int, m: int, p1: float) -> SubsetCpd:
    """Subset-model CPD whose leading-m-bit guess succeeds with subset_breach(n, m, p1)."""
    return SubsetCpd(n, m, subset_breach(n, m, p1))


def delta_subset_bound(delta: float, m: int) -> float:
    """Bound delta + 2**-m on guessing any m-bit subsequence when delta(G, U) <= delta."""
    if not 0.0 <= delta <= 1.0:
        raise CpdError(f"delta={delta} outside [0, 1]")
    if m < 0:
        raise CpdError("m must be nonnegative")
    return delta + 2.0 ** (-m)


def all_subset_maxima(cpd: DenseCpd):
    """Yield (positions, max marginal probability) for every nonempty bit subset."""
    for r in range(1, cpd.n + 1):
        for pos in itertools.combinations(range(cpd.n), r):
            yield pos, cpd.best_subset_guess(pos)


def markov_tail_bound(mean: float, threshold: float) -> float:
    """Pr[X >= threshold] <= E[X] / threshold for nonnegative X, clipped at 1."""
    if threshold <= 0:
        raise CpdError("threshold must be positive")
    if mean < 0:
        raise CpdError("mean must be nonnegative")
    return min(1.0, mean / threshold)


def variational_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def optimal_coupling(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Joint distribution with marginals p, q and Pr[X != X'] = delta(p, q).

    Diagonal gets min(p_i, q_i); the leftover mass of p is spread over the
    leftover mass of q proportionally.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    common = np.minimum(p, q)
    joint = np.diag(common)
    rp, rq = p - common, q - common
    leftover = rp.sum()
    if leftover > 0:
        joint = joint + np.outer(rp, rq) / leftover
    return joint


@dataclass(frozen=True)
class CouplingResult:
    delta: float
    pr_neq_independent: float
    pr_neq_optimal: float


def coupling_demo(P: DenseCpd, Q: DenseCpd) -> CouplingResult:
    """Contrast the independent coupling with the distance-achieving one."""
    if P.n != Q.n:
        raise CpdError(f"mismatched bit lengths {P.n} and {Q.n}")
    if P.n > 16:
        raise CpdError("coupling demo is limited to n <= 16")
    delta = variational_distance(P.p, Q.p)
    indep = 1.0 - float(np.dot(P.p, Q.p))
    if P.n <= 12:
        optimal = 1.0 - float(np.trace(optimal_coupling(P.p, Q.p)))
    else:
        # off-diagonal mass of the coupling equals 1 - sum(min(p, q)); skip forming N x N
        optimal = 1.0 - float(np.sum(np.minimum(P.p, Q.p)))
    return CouplingResult(delta, indep, optimal)


DistillMap = Callable[[np.ndarray], np.ndarray]


def privacy_distill(cpd: Cpd, mapping, m: int) -> DenseCpd:
    """Push the CPD forward through an openly known n -> m bit map.

    ``mapping`` is either an integer array of length 2**n (the image of each
    candidate) or a vectorized callable on candidate indices.
    """
    src = cpd.to_dense()
    if m >= src.n:
        raise CpdError(f"output length m={m} must be below n={src.n}")
    if src.n > 16:
        raise CpdError("push-forward evaluation is limited to n <= 16")
    idx = np.arange(src.size)
    image = np.asarray(mapping(idx) if callable(mapping) else mapping, dtype=np.int64)
    if image.shape != idx.shape or image.min() < 0 or image.max() >= (1 << m):
        raise CpdError("map must send every candidate to an m-bit value")
    # no renormalization: merging nonnegative mass is monotone in floating point,
    # so the output maximum can never drop below the input maximum
    out = np.bincount(image, weights=src.p, minlength=1 << m)
    result = DenseCpd(out, m)
    if result.p.max() < src.p.max():
        raise AssertionError("push-forward lowered the maximum probability")
    return result
