"""Command-line entry point: ``kcq <subcommand> [options]``.

Exit status is 0 when every run is accepted, 2 when a protocol run aborts
and 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path


from . import __version__
from .coherent import advantage_table, heterodyne_binary_error, phase_rms
from .cppm import cppm_row, simulate_cppm
from .keystream import KeyMaterial, key_from_int, poly_degree
from .measures import ProductBernoulliCpd, SpikeUniformCpd, subset_model_cpd
from .pipeline import AbortCounter, breach_table, run_protocol
from .qubit import EveMeasurement, code_rate_window, optimize_eve_basis, simulate_protocol
from .trial import _plain

EXIT_OK, EXIT_ERROR, EXIT_ABORT = 0, 1, 2
DEFAULT_KEY = 0x5DEECE66D3A4C1F29B7E0C86F1D2A49


def _rows_to_text(rows: list[dict], fmt: str) -> str:
    rows = [_plain(r) for r in rows]
    if fmt == "json":
        return json.dumps(rows if len(rows) != 1 else rows[0], sort_keys=True, indent=2) + "\n"
    buf = io.StringIO()
    fields: list[str] = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _measures(args) -> list[dict]:
    if args.subset is not None:
        cpd = subset_model_cpd(args.n, args.subset, args.p1)
    elif args.product is not None:
        cpd = ProductBernoulliCpd(args.n, args.product)
    else:
        cpd = SpikeUniformCpd(args.n, args.p1)
    row = {"cpd": type(cpd).__name__, "n": args.n}
    row.update(cpd.measures().as_dict())
    return [row]


def _qubit(args) -> list[dict]:
    poly = int(args.poly, 16)
    key = KeyMaterial(key_from_int(args.key, poly_degree(poly)), "lfsr", poly)
    opt = optimize_eve_basis(args.M, key_after=not args.no_key_after)
    theta = opt.theta if args.theta is None else args.theta
    rep = simulate_protocol(args.trials, args.M, key, args.p_c, EveMeasurement(theta), args.seed,
                            eve_key_after=not args.no_key_after)
    row = rep.flat()
    window = code_rate_window(args.p_c, rep.analytic["eve_error"])
    row.update({"eve_optimum_error": opt.error, "rate_low": window.low, "rate_high": window.high})
    return [row]


def _binary(args) -> list[dict]:
    rows = []
    for i, S in enumerate(args.S):
        t = advantage_table(S)
        het = heterodyne_binary_error(S, args.trials, args.seed + i)
        rows.append({"S": S, "pbar": t.optimal, "pph": t.phase, "phet": t.heterodyne,
                     "mc_het": het.mc, "sigma": het.sigma, "phase_rms": phase_rms(S)})
    return rows


def _cppm(args) -> list[dict]:
    return [cppm_row(args.N, args.S, args.trials, args.seed, args.key)]


def _parse_params(pairs: list[str]) -> dict:
    params = {}
    for item in pairs:
        k, sep, v = item.partition("=")
        if not sep:
            raise ValueError(f"parameter {item!r} is not key=value")
        params[k] = json.loads(v) if v not in ("", "None") else None
    return params


def _pipeline(args):
    params = _parse_params(args.param)
    runs = [run_protocol(args.backend, params, args.seed + r) for r in range(args.runs)]
    counter = AbortCounter()
    for r in runs:
        counter.add(r)
    return runs, counter


def _write_pipeline(runs, counter, fmt: str, out: str | None) -> None:
    if fmt == "json":
        if len(runs) == 1:
            text = runs[0].to_json() + "\n"
        else:
            text = json.dumps({"runs": [r.to_dict() for r in runs], "aborts": counter.as_dict()},
                              sort_keys=True, indent=2) + "\n"
    else:
        rows = []
        for r in runs:
            d = r.to_dict()
            rows.append({"run_id": d["run_id"], "backend": d["backend"], "seed": d["seed"],
                         "version": d["version"], **d["metrics"]})
        text = _rows_to_text(rows, "csv")
    _emit(text, out)


def _report(args) -> int:
    from . import plotting

    out = Path(args.out or "report")
    out.mkdir(parents=True, exist_ok=True)
    trials = args.trials
    seed = args.seed

    meas = []
    for l in (1, 2, 4, 8):
        cpd = SpikeUniformCpd.from_level(16, l)
        meas.append({"n": 16, "level": l, **cpd.measures().as_dict()})
    table = breach_table(10 ** 6, info_per_bit=1e-3)
    breach = [{"n": table.n, "m": m, "breach": p} for m, p in table.rows]

    qubit = []
    for M in (2, 4, 64):
        for after in (True, False):
            opt = optimize_eve_basis(M, key_after=after)
            key = KeyMaterial.from_int(DEFAULT_KEY, 127)
            rep = simulate_protocol(trials, M, key, 0.02, EveMeasurement(opt.theta), seed, eve_key_after=after)
            qubit.append({"M": M, "key_after": after, "theta": opt.theta, "eve_error": opt.error,
                          "mc_eve_error": rep.estimates["eve_error"], "sigma": rep.estimates["eve_sigma"]})

    binary = []
    for i, S in enumerate((1.0, 2.0, 5.0, 10.0)):
        t = advantage_table(S)
        het = heterodyne_binary_error(S, trials, seed + i)
        binary.append({"S": S, "pbar": t.optimal, "pph": t.phase, "phet": t.heterodyne,
                       "mc_het": het.mc, "sigma": het.sigma})

    cppm = [cppm_row(N, S, trials, seed) for N, S in ((16, 1.0), (16, 2.0), (64, 2.0))]
    mc = {n: simulate_cppm(1 << n, 2.0, max(trials // 10, 1000), seed, bob=False).estimates["eve_error"]
          for n in (2, 4, 6, 8)}

    runs = [run_protocol(b, None, seed) for b in ("qubit", "cppm")]
    counter = AbortCounter()
    for r in runs:
        counter.add(r)

    tables = {"measures": meas, "breach": breach, "qubit": qubit, "binary": binary, "cppm": cppm}
    ext = "json" if args.format == "json" else "csv"
    for name, rows in tables.items():
        (out / f"{name}.{ext}").write_text(_rows_to_text(rows, args.format) if args.format == "csv"
                                          else json.dumps(_plain(rows), sort_keys=True, indent=2) + "\n")
    _write_pipeline(runs, counter, "json", str(out / "pipeline.json"))

    figs = out / "figures"
    plotting.eve_error_vs_angle(figs / "eve_error_vs_angle.png")
    plotting.receiver_errors(figs / "receiver_errors.png")
    plotting.cppm_bound(figs / "cppm_bound.png", mc=mc)
    plotting.entropy_frontier(figs / "entropy_frontier.png")
    return EXIT_OK if counter.aborted == 0 else EXIT_ABORT


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trials", type=int, default=100_000)
    common.add_argument("--out", default=None, help="output file (directory for report)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = argparse.ArgumentParser(prog="kcq", description="Keyed quantum-noise key generation toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("measures", parents=[common], help="security measures of a model CPD")
    m.add_argument("--n", type=int, default=16)
    m.add_argument("--p1", type=float, default=2.0 ** -8)
    m.add_argument("--product", type=float, default=None, help="i.i.d. bit bias p0 instead of a spike")
    m.add_argument("--subset", type=int, default=None, help="subset-model CPD with this many exposed bits")

    q = sub.add_parser("qubit", parents=[common], help="keyed qubit protocol against a collective attack")
    q.add_argument("--M", type=int, default=2)
    q.add_argument("--p-c", dest="p_c", type=float, default=0.0)
    q.add_argument("--theta", type=float, default=None, help="Eve's angle; optimized if omitted")
    q.add_argument("--no-key-after", action="store_true", help="Eve never learns the key")
    q.add_argument("--key", type=lambda v: int(v, 0), default=DEFAULT_KEY,
                   help="seed key as an integer (0x.. accepted); low-weight keys give a long biased prefix")
    q.add_argument("--poly", default=hex((1 << 127) | (1 << 126) | 1), help="connection polynomial, hex mask")

    b = sub.add_parser("binary", parents=[common], help="binary coherent-state receivers")
    b.add_argument("--S", type=float, nargs="+", default=[1.0, 2.0, 5.0, 10.0])

    c = sub.add_parser("cppm", parents=[common], help="keyed pulse-position modulation")
    c.add_argument("--N", type=int, default=16)
    c.add_argument("--S", type=float, default=2.0)
    c.add_argument("--key", type=lambda v: int(v, 0), default=DEFAULT_KEY)

    pl = sub.add_parser("pipeline", parents=[common], help="end-to-end key generation runs")
    pl.add_argument("--backend", choices=("qubit", "cppm"), default="qubit")
    pl.add_argument("--param", action="append", default=[], help="backend parameter key=value (JSON value)")
    pl.add_argument("--runs", type=int, default=1)

    sub.add_parser("report", parents=[common], help="tables and figures for every module")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.trials < 1:
            raise ValueError("--trials must be positive")
        if args.command == "report":
            return _report(args)
        if args.command == "pipeline":
            runs, counter = _pipeline(args)
            _write_pipeline(runs, counter, args.format, args.out)
            return EXIT_OK if counter.aborted == 0 else EXIT_ABORT
        handler = {"measures": _measures, "qubit": _qubit, "binary": _binary, "cppm": _cppm}[args.command]
        _emit(_rows_to_text(handler(args), args.format), args.out)
        return EXIT_OK
    except (ValueError, OSError) as exc:
        print(f"kcq: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
