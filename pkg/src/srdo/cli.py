"""Command line entry point: ``srdo run``, ``srdo verify``, ``srdo scheme``.

Exit status: 0 success, 1 unexpected error, 2 configuration error,
3 divergence, 4 bound violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .coding import build_scheme, verify_scheme
from .config import load_config
from .errors import ConfigError, SchemeError
from .experiment import (
    EXIT_BOUND,
    EXIT_CONFIG,
    EXIT_ERROR,
    EXIT_OK,
    run_experiment,
    verify_bounds,
)
from .linalg import Rng

log = logging.getLogger("srdo")


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "output", None):
        cfg = cfg.with_output(args.output)
    if getattr(args, "max_iters", None):
        cfg = replace(cfg, control=replace(cfg.control, max_iters=args.max_iters))
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    res = run_experiment(cfg, jobs=args.jobs, sweep=args.sweep, plot=args.plot)
    for r in res.results:
        print(f"seed {r.seed}: {r.status}, {r.iterations} iterations, "
              f"final AE {r.final_ae:.6e}, CE {r.final_ce:.6e}")
    if res.ordering is not None:
        print("\n".join(res.ordering.lines()))
    print(f"wrote {len(res.files)} files under {cfg.control.output}")
    return res.status


def cmd_verify(args) -> int:
    cfg = _load(args)
    report = verify_bounds(cfg, jobs=args.jobs, corrupt_scheme=args.corrupt_scheme,
                           write=args.write)
    print("\n".join(report.lines()))
    print("verify: " + ("ok" if report.status == EXIT_OK else "FAILED"))
    return report.status


def cmd_scheme(args) -> int:
    try:
        scheme = build_scheme(args.n, args.s, Rng(args.seed), args.max_constant)
    except (SchemeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(scheme.to_text())
    dev = verify_scheme(scheme)
    print(f"# max |AB - 1| = {dev:.17g}")
    return EXIT_OK if dev <= 1e-8 else EXIT_BOUND


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srdo",
                                 description="Straggler-robust distributed optimization simulator")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every configured seed and write CSV traces")
    run.add_argument("config")
    run.add_argument("--output", help="override [control] output")
    run.add_argument("--max-iters", type=int, help="override [control] max_iters")
    run.add_argument("--jobs", type=int, default=1, help="parallel seed runs (default 1)")
    run.add_argument("--sweep", action="store_true",
                     help="run scenarios 1-3 on shared realizations and report the ordering")
    run.add_argument("--plot", action="store_true", help="also write PNG error curves")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run with the bound checkers and fail on violations")
    ver.add_argument("config")
    ver.add_argument("--output", help="override [control] output")
    ver.add_argument("--max-iters", type=int, help="override [control] max_iters")
    ver.add_argument("--jobs", type=int, default=1)
    ver.add_argument("--write", action="store_true", help="also write the CSV traces")
    ver.add_argument("--corrupt-scheme", action="store_true",
                     help="debug: zero one entry of partition 0's B before running")
    ver.set_defaults(func=cmd_verify)

    sch = sub.add_parser("scheme", help="print a coding scheme and its AB deviation")
    sch.add_argument("--n", type=int, required=True, help="workers per partition")
    sch.add_argument("--s", type=int, required=True, help="stragglers tolerated")
    sch.add_argument("--seed", type=int, default=0)
    sch.add_argument("--max-constant", type=float, default=None,
                     help="redraw B while ||A||_inf ||B||_2,inf exceeds this")
    sch.set_defaults(func=cmd_scheme)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if getattr(args, "config", None) else EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
