"""End-to-end key generation over either physical backend.

A run goes: shared seed key -> keyed transmission (qubit or CPPM backend)
-> sampled error estimate and advantage check -> syndrome reconciliation
-> Toeplitz hashing -> tag verification -> key-consumption ledger.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from . import __version__
from .cppm import CppmConstellation, bob_detect_batch, eve_heterodyne_batch
from .keystream import POLY_127, PRIMITIVE_POLYS, KeyMaterial, Lfsr, parse_bits
from .measures import DenseCpd, binary_entropy, privacy_distill, subset_breach
from .qubit import EveMeasurement, eve_collective_error, optimize_eve_basis, run_qubits

LEAK_COEFF = 1.1
MAX_RECONCILE_BITS = 1 << 16
MAX_EXACT_DECODE_BITS = 16


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class AdvantageWindow:
    info_bob: float
    info_eve: float

    @property
    def low(self) -> float:
        return self.info_eve

    @property
    def high(self) -> float:
        return self.info_bob

    @property
    def empty(self) -> bool:
        return not self.info_bob > self.info_eve


def advantage_check(p_B: float, p_E: float) -> AdvantageWindow:
    """Binary-symmetric mutual informations 1 - h2(p) for Bob and Eve."""
    for p in (p_B, p_E):
        if not 0.0 <= p <= 0.5:
            raise PipelineError(f"error rate {p} outside [0, 0.5]")
    return AdvantageWindow(1.0 - binary_entropy(p_B), 1.0 - binary_entropy(p_E))


def reconciliation_leak(n: int, p_c: float, coeff: float = LEAK_COEFF) -> int:
    """Syndrome bits disclosed: ceil(coeff * n * h2(p_c))."""
    if p_c <= 0:
        return 0
    return int(math.ceil(coeff * n * binary_entropy(min(p_c, 0.5)) - 1e-9))


@dataclass
class ReconcileResult:
    shared: np.ndarray
    leak: int
    corrected: int
    success: bool


def reconcile(raw_A, raw_B, p_c: float, coeff: float = LEAK_COEFF) -> ReconcileResult:
    """Idealized syndrome exchange at the accounting-model leak.

    The decoder is modelled as succeeding exactly when the observed
    discrepancy fits in the disclosed syndrome, n h2(k/n) <= leak; then
    Bob's string becomes Alice's. Otherwise Bob keeps his string and the
    result is flagged.
    """
    a, b = parse_bits(raw_A), parse_bits(raw_B)
    if a.size != b.size:
        raise PipelineError("strings differ in length")
    if a.size > MAX_RECONCILE_BITS:
        raise PipelineError(f"reconciliation is limited to {MAX_RECONCILE_BITS} bits")
    n = a.size
    leak = reconciliation_leak(n, p_c, coeff)
    k = int(np.count_nonzero(a != b))
    ok = k == 0 or (k / n < 0.5 and n * binary_entropy(k / n) <= leak)
    return ReconcileResult(a.copy() if ok else b.copy(), leak, k if ok else 0, ok)


def hamming74_parity() -> np.ndarray:
    """Parity-check matrix whose column j is the binary form of j + 1."""
    cols = np.arange(1, 8)
    return np.array([(cols >> s) & 1 for s in (2, 1, 0)], dtype=np.uint8)


def _syndromes(H: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (H.astype(np.int64) @ x.astype(np.int64).T) % 2


def coset_leaders(H: np.ndarray) -> dict[bytes, np.ndarray]:
    """Minimum-weight error pattern for every syndrome, by exhaustive search."""
    r, n = H.shape
    if n > MAX_EXACT_DECODE_BITS:
        raise PipelineError(f"exhaustive decoding is limited to {MAX_EXACT_DECODE_BITS} bits")
    patterns = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)
    order = np.argsort(patterns.sum(axis=1), kind="stable")
    table: dict[bytes, np.ndarray] = {}
    syn = _syndromes(H, patterns).T.astype(np.uint8)
    for idx in order:
        key = syn[idx].tobytes()
        if key not in table:
            table[key] = patterns[idx]
        if len(table) == 1 << r:
            break
    return table


def syndrome_decode(raw_A, raw_B, H: np.ndarray) -> ReconcileResult:
    """Exact reconciliation of one short block: Alice sends H a, Bob flips the coset leader."""
    a, b = parse_bits(raw_A), parse_bits(raw_B)
    if a.size != H.shape[1] or b.size != H.shape[1]:
        raise PipelineError("block length does not match the parity-check matrix")
    table = coset_leaders(H)
    diff = (_syndromes(H, a[None]) ^ _syndromes(H, b[None]))[:, 0].astype(np.uint8)
    fixed = b ^ table[diff.tobytes()]
    return ReconcileResult(fixed, int(np.linalg.matrix_rank(H)), int(table[diff.tobytes()].sum()),
                           bool(np.array_equal(fixed, a)))


def _hash_stream(hash_key, length: int) -> np.ndarray:
    seed = parse_bits(hash_key)
    poly = PRIMITIVE_POLYS.get(seed.size)
    if poly is None:
        raise PipelineError(f"no stock polynomial for a {seed.size}-bit hash key")
    return Lfsr(poly, seed).take(length)


def toeplitz_hash(bits, m: int, hash_key) -> np.ndarray:
    """m-bit image T x over GF(2) with T[i, j] = t[i - j + L - 1].

    The L + m - 1 diagonal bits t come from an LFSR seeded by the hash key,
    so the key costs only the register length.
    """
    x = parse_bits(bits)
    L = x.size
    if not 0 < m < L:
        raise PipelineError(f"output length m={m} must satisfy 0 < m < {L}")
    t = _hash_stream(hash_key, L + m - 1)
    full = np.rint(signal.fftconvolve(t.astype(float), x.astype(float))).astype(np.int64)
    return (full[L - 1:L - 1 + m] % 2).astype(np.uint8)


@dataclass
class DistillResult:
    key: np.ndarray
    hash_key_bits: int


def distill(shared, m: int, hash_key) -> DistillResult:
    """Compress the reconciled string to m bits with a keyed Toeplitz matrix."""
    return DistillResult(toeplitz_hash(shared, m, hash_key), int(parse_bits(hash_key).size))


def distill_cpd(cpd: DenseCpd, m: int, hash_key) -> DenseCpd:
    """Push an attacker CPD through the Toeplitz map; small n only."""
    n = cpd.n
    idx = np.arange(cpd.size)
    cands = ((idx[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.uint8)
    t = _hash_stream(hash_key, n + m - 1)
    rows = np.array([[t[i - j + n - 1] for j in range(n)] for i in range(m)], dtype=np.int64)
    out_bits = (cands.astype(np.int64) @ rows.T) % 2
    image = out_bits @ (1 << np.arange(m - 1, -1, -1))
    return privacy_distill(cpd, image, m)


@dataclass(frozen=True)
class Verification:
    accepted: bool
    tag_bits: int
    collision_probability: float


def _tag(bits: np.ndarray, t: int) -> int:
    digest = hashlib.sha256(len(bits).to_bytes(8, "big") + np.packbits(bits).tobytes()).digest()
    return int.from_bytes(digest, "big") >> (256 - t)


def verify_keys(G_A, G_B, tag_bits: int = 64) -> Verification:
    """Compare t-bit tags; a mismatch passes only with the modelled chance 2^-t."""
    if not 1 <= tag_bits <= 256:
        raise PipelineError("tag length must be in [1, 256]")
    a, b = parse_bits(G_A), parse_bits(G_B)
    coll = 2.0 ** (-tag_bits)
    if a.size == 0 or a.size != b.size:
        return Verification(False, tag_bits, coll)
    return Verification(_tag(a, tag_bits) == _tag(b, tag_bits), tag_bits, coll)


def guessing_attack_budget(key_bits: int) -> float:
    """Guessing the seed key alone breaks everything with probability 2^-|K|."""
    if key_bits < 1:
        raise PipelineError("key length must be >= 1")
    return 2.0 ** (-key_bits)


def security_floor_log2(log2_p1_estimate: float, key_bits: int) -> float:
    """log2 of max(p1 estimate, 2^-|K|)."""
    if key_bits < 1:
        raise PipelineError("key length must be >= 1")
    return max(log2_p1_estimate, -float(key_bits))


@dataclass
class BreachTable:
    n: int
    log2_p1: float  # whole-string guessing probability
    adequately_small: bool | None
    rows: list[tuple[int, float]]  # (subset length m, breach probability)
    log2_rows: list[tuple[int, float]]


def breach_table(n: int, info_per_bit: float | None = None, lam: float | None = None,
                      decades: int = 4) -> BreachTable:
    """Whole-key guessing probability and breach probabilities of m-bit subsets.

    Pass ``info_per_bit`` (I_E/n, used as p1) or ``lam`` (p1 = 2^{-lam (n + log2 n)}).
    Subset lengths are n, n/10, n/100, ...; the breach probability of an
    m-bit subset is p1 n / m, capped at one.
    """
    if n < 1 or (info_per_bit is None) == (lam is None):
        raise PipelineError("give n >= 1 and exactly one of info_per_bit, lam")
    if lam is not None:
        if lam <= 0:
            raise PipelineError("lam must be positive")
        log2_p1 = -lam * (n + math.log2(n))
        small = lam >= 1
    else:
        if not 0 < info_per_bit <= 1:
            raise PipelineError("info_per_bit must be in (0, 1]")
        log2_p1 = math.log2(info_per_bit)
        small = None
    rows, log2_rows = [], []
    for d in range(decades):
        m = n // 10 ** d
        if m < 1:
            break
        if info_per_bit is not None:
            with warnings.catch_warnings():
                # the m = n row is the whole string, not a proper subset
                warnings.simplefilter("ignore")
                p = subset_breach(n, m, min(info_per_bit, m / n))
            lp = math.log2(p)
        else:
            lp = min(0.0, log2_p1 + math.log2(n / m))
            p = 2.0 ** lp
        rows.append((m, p))
        log2_rows.append((m, lp))
    return BreachTable(n, log2_p1, small, rows, log2_rows)


QUBIT_DEFAULTS = {"n": 4096, "M": 2, "p_c": 0.02, "theta": None, "sample_fraction": 0.1,
                  "tag_bits": 64, "key_bits": 127, "hash_key_bits": 127}
CPPM_DEFAULTS = {"N": 16, "S": 2.0, "uses": 2048, "sample_fraction": 0.1,
                 "tag_bits": 64, "key_bits": 127, "hash_key_bits": 127}


@dataclass
class ProtocolRun:
    backend: str
    params: dict
    seed: int
    metrics: dict = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.metrics.get("status") == "accept"

    @property
    def run_id(self) -> str:
        blob = json.dumps({"backend": self.backend, "params": self.params, "seed": self.seed}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "backend": self.backend, "params": self.params,
                "metrics": self.metrics, "seed": self.seed, "version": __version__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _random_bits(rng: np.random.Generator, size: int) -> np.ndarray:
    bits = rng.integers(0, 2, size, dtype=np.uint8)
    if not bits.any():
        bits[0] = 1
    return bits


def _transmit_qubit(p: dict, key_seed: np.ndarray, seed: int):
    key = KeyMaterial(key_seed, "lfsr", POLY_127)
    theta = p["theta"]
    if theta is None:
        theta = optimize_eve_basis(p["M"], key_after=True).theta
    run = run_qubits(p["n"], p["M"], key, p["p_c"], EveMeasurement(theta), seed)
    return run.alice, run.bob, run.eve, eve_collective_error(p["M"], theta, True), p["n"]


def _index_bits(idx: np.ndarray, n: int) -> np.ndarray:
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.uint8).reshape(-1)


def _transmit_cppm(p: dict, key_seed: np.ndarray, seed: int):
    const = CppmConstellation(p["N"], p["S"], key_seed)
    rng = np.random.default_rng(seed)
    sent = rng.integers(0, p["N"], p["uses"])
    bob = bob_detect_batch(const, sent, rng)
    eve = eve_heterodyne_batch(const, sent, rng, key_granted_after=True).decisions
    n = const.n
    a, b, e = _index_bits(sent, n), _index_bits(bob, n), _index_bits(eve, n)
    # the attack-model bit error is not known in closed form; Eve's own rate stands in
    return a, b, e, float(np.mean(a != e)), p["uses"]


def run_protocol(backend: str, params: dict | None = None, seed: int = 0) -> ProtocolRun:
    """One full key-generation round; never raises on protocol aborts."""
    if backend == "qubit":
        p = {**QUBIT_DEFAULTS, **(params or {})}
        transmit = _transmit_qubit
    elif backend == "cppm":
        p = {**CPPM_DEFAULTS, **(params or {})}
        transmit = _transmit_cppm
    else:
        raise PipelineError(f"unknown backend {backend!r}")
    unknown = set(p) - set(QUBIT_DEFAULTS if backend == "qubit" else CPPM_DEFAULTS)
    if unknown:
        raise PipelineError(f"unknown parameters {sorted(unknown)}")
    run = ProtocolRun(backend, p, seed)
    m = run.metrics
    key_ss, link_ss, sample_ss, hash_ss = np.random.SeedSequence(seed).spawn(4)
    key_seed = _random_bits(np.random.default_rng(key_ss), p["key_bits"])
    link_seed = int(link_ss.generate_state(1)[0])
    alice, bob, eve, p_E, uses = transmit(p, key_seed, link_seed)

    # disclose a random sample to estimate Bob's error
    rng = np.random.default_rng(sample_ss)
    raw = alice.size
    k = max(1, int(round(p["sample_fraction"] * raw)))
    sample = np.zeros(raw, dtype=bool)
    sample[rng.choice(raw, k, replace=False)] = True
    p_B = float(np.mean(alice[sample] != bob[sample]))
    p_B_margin = min(0.5, p_B + 2.0 * math.sqrt(max(p_B * (1 - p_B), 1.0 / k) / k))
    keep = ~sample
    a, b, e = alice[keep], bob[keep], eve[keep]
    m.update({"uses": uses, "raw_bits": raw, "sample_bits": k, "bob_error_estimate": p_B,
              "eve_error_model": p_E, "eve_error_empirical": float(np.mean(a != e)),
              "key_bits": p["key_bits"], "hash_key_bits": p["hash_key_bits"]})

    window = advantage_check(min(p_B, 0.5), min(p_E, 0.5))
    m.update({"info_bob": window.info_bob, "info_eve": window.info_eve})
    if window.empty:
        return _abort(run, "no advantage")

    rec = reconcile(a, b, p_B_margin)
    m.update({"leak_bits": rec.leak, "reconciled": rec.success})
    if not rec.success:
        return _abort(run, "reconciliation failed")

    target = int(math.floor(a.size * binary_entropy(min(p_E, 0.5)))) - rec.leak
    m["distilled_bits"] = max(target, 0)
    if target < 1:
        return _abort(run, "nothing left after leakage")
    hash_key = _random_bits(np.random.default_rng(hash_ss), p["hash_key_bits"])
    G_A = distill(a, target, hash_key)
    G_B = distill(rec.shared, target, hash_key)
    ver = verify_keys(G_A.key, G_B.key, p["tag_bits"])
    m.update({"verified": ver.accepted, "tag_collision_probability": ver.collision_probability})
    if not ver.accepted:
        return _abort(run, "verification failed")

    net = target - p["key_bits"] - G_A.hash_key_bits
    m.update({"net_bits": net, "net_rate": net / uses, "fresh_key": net > 0,
              "log2_security_floor": security_floor_log2(-float(target), p["key_bits"]),
              "key_digest": hashlib.sha256(np.packbits(G_A.key).tobytes()).hexdigest()[:16],
              "status": "accept"})
    return run


def _abort(run: ProtocolRun, reason: str) -> ProtocolRun:
    run.metrics.update({"status": "abort", "abort_reason": reason, "net_bits": 0, "net_rate": 0.0,
                        "fresh_key": False})
    return run


@dataclass
class AbortCounter:
    runs: int = 0
    aborted: int = 0
    reasons: dict = field(default_factory=dict)

    def add(self, run: ProtocolRun) -> None:
        self.runs += 1
        if not run.accepted:
            self.aborted += 1
            r = run.metrics.get("abort_reason", "?")
            self.reasons[r] = self.reasons.get(r, 0) + 1

    def as_dict(self) -> dict:
        return asdict(self)
