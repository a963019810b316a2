"""Command line entry point.

    rsma-fbl run CONFIG [--seed N] [--draws N] [--out PATH] [--tol X] [--jobs N]
    rsma-fbl aggregate CSV [--out PATH]
    rsma-fbl show-config-template {underloaded,overloaded,random4x8}

Exit status: 0 on success, 1 for invalid input, 2 when at least one grid
point hit a solver failure (the CSV is still written).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config, template_names, template_text
from .sweep import aggregate, has_failures, read_csv, run_sweep, write_csv

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage errors are invalid input, not solver failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rsma-fbl", description="Finite-blocklength RSMA sum-rate sweeps.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the sweep described by a scenario file")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="base seed for random channel draws")
    run.add_argument("--draws", type=int, help="number of random channel draws")
    run.add_argument("--out", help="output CSV path")
    run.add_argument("--tol", type=float, help="convex subproblem tolerance")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    agg = sub.add_parser("aggregate", help="mean/std/count of the evaluated sum rate per blocklength and scheme")
    agg.add_argument("csv")
    agg.add_argument("--out", help="write the summary here instead of stdout")

    tpl = sub.add_parser("show-config-template", help="print a scenario file")
    tpl.add_argument("scenario", help=f"one of: {', '.join(template_names())}")
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed, draws=args.draws, out=args.out, tol=args.tol)
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be positive, got {args.jobs}")

    def progress(done, total):
        print(f"\r{done}/{total} grid points", end="", file=sys.stderr, flush=True)

    records = run_sweep(cfg, jobs=args.jobs, progress=progress)
    print(file=sys.stderr)
    write_csv(records, cfg.output_path)
    print(f"wrote {len(records)} records to {cfg.output_path}")
    if has_failures(records):
        n = sum(1 for r in records if r.status == "numerical_failure")
        print(f"{n} record(s) ended in a solver failure", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_aggregate(args) -> int:
    try:
        records = read_csv(args.csv)
    except FileNotFoundError:
        raise ConfigError(f"no such file: {args.csv}") from None
    rows = aggregate(records)
    write_csv(rows, args.out or sys.stdout)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "aggregate":
            return _cmd_aggregate(args)
        sys.stdout.write(template_text(args.scenario))
        return EXIT_OK
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
