"""``onepass-ntk`` command line.

Exit codes: 0 ok, 2 configuration/usage, 3 I/O or file format, 4 invariant
violation, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DimensionError, DomainError, FormatError, InvariantViolation, NumericalError,
                     PreconditionError, TruncationError, UsageError)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT, EXIT_NUMERICAL = 0, 2, 3, 4, 5
log = logging.getLogger("onepass_ntk")


def fmt(v) -> str:
    return f"{float(v):.12g}"


def _round_floats(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_spectrum(args) -> int:
    from .spectrum import ntk_spectrum

    table = ntk_spectrum(args.d, args.blocks, args.tol)
    _emit(json.dumps(_round_floats(table.to_dict()), indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_bound(args) -> int:
    from .network import InverseTime
    from .spectrum import BoundParams, bound_over_blocks, c1, ntk_spectrum, required_width

    params = BoundParams(args.theta, args.f_star_norm, args.tau, not args.general, args.delta, 1, args.T)
    table = ntk_spectrum(args.d, args.blocks)
    blocks = [args.ell] if args.ell else list(range(1, args.blocks + 1))
    remainders = {k: args.remainder for k in blocks}
    ts = np.unique(np.linspace(0, args.T, min(args.points, args.T + 1)).astype(int))
    best, argmin, _ = bound_over_blocks(params, InverseTime(args.theta), table, remainders, ts)
    lines = [f"# c1={fmt(c1(params))}"]
    if args.width_c is not None:
        w = required_width(args.d, max(args.T, 1), args.theta, args.delta or 0.1, args.width_c)
        lines.append(f"# required_width_log10={fmt(w.log10_value)} log_clamped={w.log_clamped}")
    lines.append("t,bound,argmin_block")
    lines += [f"{int(t)},{fmt(b)},{int(k)}" for t, b, k in zip(ts, best, argmin)]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _load(args):
    from .config import load_config

    cfg, values = load_config(args.config, args.seed)
    return cfg, values


def cmd_train(args) -> int:
    from .experiment import run_training, write_trace

    cfg, _ = _load(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        trace = run_training(cfg, args.run_index, audit=not args.no_audit)
    except InvariantViolation as exc:
        _forensics(out, exc)
        raise
    path = write_trace(trace, out / f"trace_run{args.run_index:03d}.csv")
    log.info("wrote %s", path)
    return EXIT_OK


def _forensics(out: Path, exc: InvariantViolation):
    (out / "violation.json").write_text(json.dumps(exc.record, indent=2, default=str) + "\n")


def cmd_experiment(args) -> int:
    from .experiment import (aggregate_runs, compare_to_bound, resolve_target, run_experiment, target_remainders,
                             write_trace)
    from .network import InverseTime
    from .spectrum import BoundParams, ntk_spectrum

    cfg, values = _load(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        traces = run_experiment(cfg, jobs=args.jobs, audit=not args.no_audit)
    except InvariantViolation as exc:
        _forensics(out, exc)
        raise
    for tr in traces:
        write_trace(tr, out / f"trace_run{tr.meta['run_index']:03d}.csv")
    agg = aggregate_runs(traces)
    agg.write_csv(out / "aggregate.csv")
    if isinstance(cfg.schedule, InverseTime) and cfg.d >= 3:
        resolved = resolve_target(cfg)
        table = ntk_spectrum(cfg.d, values.get("bound_blocks") or 6)
        params = BoundParams(cfg.schedule.theta, resolved.norm, cfg.tau, cfg.init == "symmetric",
                             values.get("delta") or (None if cfg.init == "symmetric" else 0.1))
        rem, exact = target_remainders(resolved.train, table, resolved.norm)
        rows = compare_to_bound(agg, table, params, cfg.schedule, rem, exact)
        with open(out / "bound_comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "empirical_mean", "bound", "argmin_block", "below_empirical", "exact_remainder"])
            for r in rows:
                w.writerow([r["t"], fmt(r["empirical_mean"]), fmt(r["bound"]), r["argmin_block"],
                            int(r["below_empirical"]), int(r["exact_remainder"])])
    log.info("wrote %d traces and aggregate.csv to %s", len(traces), out)
    return EXIT_OK


def cmd_mnist_prep(args) -> int:
    from .mnist import load_mnist, write_cache

    ds = load_mnist(args.images, args.labels)
    write_cache(args.out, ds)
    print(json.dumps({"n": ds.n, "d": ds.d, "n_total": ds.meta["n_total"], "cache": str(args.out)}))
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    return EXIT_OK if run_checks() else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onepass-ntk", description="One-pass SGD / NTK toolkit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", help="NTK eigen-blocks as JSON")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--blocks", type=int, default=5)
    s.add_argument("--tol", type=float, default=1e-14)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_spectrum)

    b = sub.add_parser("bound", help="bound curve as CSV (inverse-time schedule)")
    b.add_argument("--d", type=int, required=True)
    b.add_argument("--theta", type=float, default=0.1)
    b.add_argument("--f-star-norm", type=float, default=1.0)
    b.add_argument("--tau", type=float, default=0.0)
    b.add_argument("--delta", type=float)
    b.add_argument("--general", action="store_true", help="non-symmetric initialization (needs --delta)")
    b.add_argument("--T", type=int, default=1000)
    b.add_argument("--blocks", type=int, default=5)
    b.add_argument("--ell", type=int, help="fix the block index instead of minimizing over blocks")
    b.add_argument("--remainder", type=float, default=0.0, help="R(Delta_0, ell), same for every block")
    b.add_argument("--points", type=int, default=101)
    b.add_argument("--width-c", type=float, help="also report the width condition with this constant")
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bound)

    for name, fn, hlp in (("train", cmd_train, "one run -> trace CSV"),
                          ("experiment", cmd_experiment, "all runs -> traces, aggregate, bound comparison")):
        t = sub.add_parser(name, help=hlp)
        t.add_argument("--config", required=True)
        t.add_argument("--output-dir", default=".")
        t.add_argument("--seed", type=int)
        t.add_argument("--no-audit", action="store_true")
        if name == "train":
            t.add_argument("--run-index", type=int, default=0)
        else:
            t.add_argument("--jobs", type=int, default=1)
        t.set_defaults(fn=fn)

    m = sub.add_parser("mnist-prep", help="IDX files -> 0/1 dataset cache")
    m.add_argument("--images", required=True)
    m.add_argument("--labels", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(fn=cmd_mnist_prep)

    c = sub.add_parser("check", help="run the invariant suite")
    c.set_defaults(fn=cmd_check)
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, UsageError, DomainError, DimensionError, PreconditionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (NumericalError, TruncationError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
