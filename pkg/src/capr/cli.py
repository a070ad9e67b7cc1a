"""Command-line entry point: ``capr run | verify | compare | selftest``.

Exit codes: 0 success / opaque, 1 not opaque or selftest failure, 2 usage
error, 3 unreadable or malformed trace.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .core import Mode
from .history import TraceError, read_trace, split_incarnations, write_trace
from .scenarios import selftest
from .verify import HistoryTooLarge, brute_force_opaque, check_co_opaque
from .workload import SHAPES, WorkloadConfig, compare_modes, run_workload


def _workload_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--objects", type=int, default=16)
    p.add_argument("--txn-len", type=int, default=16)
    p.add_argument("--txns", type=int, default=8, help="transactions per thread")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.PARTIAL.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", choices=SHAPES, default="random")


def _config(args) -> WorkloadConfig:
    return WorkloadConfig(
        threads=args.threads, shared_objects=args.objects, txn_length=args.txn_len,
        txns_per_thread=args.txns, mode=Mode(args.mode), rng_seed=args.seed, shape=args.shape,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a workload, write its trace and print metrics")
    _workload_flags(run)
    run.add_argument("--trace", required=True, help="trace output path")

    verify = sub.add_parser("verify", help="decide conflict opacity of a trace")
    verify.add_argument("trace")
    verify.add_argument("--brute-force", action="store_true",
                        help="cross-check with the enumeration oracle (<= 8 transactions)")

    compare = sub.add_parser("compare", help="compare partial rollback against full abort")
    _workload_flags(compare)

    sub.add_parser("selftest", help="run the scripted H1 schedule end to end")
    return parser


def _verify(path: str, brute_force: bool) -> int:
    try:
        history = split_incarnations(read_trace(path))
    except TraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    verdict = check_co_opaque(history)
    sys.stdout.write(verdict.report())
    if brute_force:
        try:
            oracle = brute_force_opaque(history)
        except HistoryTooLarge as exc:
            print(f"ORACLE skipped ({exc})")
        else:
            print(f"ORACLE {'opaque' if oracle else 'not-opaque'}")
            if verdict.opaque and not oracle:
                print("error: co-opaque history rejected by the opacity oracle", file=sys.stderr)
                return 1
    return 0 if verdict.opaque else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify":
        return _verify(args.trace, args.brute_force)
    if args.command == "selftest":
        problems = selftest()
        for p in problems:
            print(f"FAIL {p}")
        print("selftest", "failed" if problems else "passed")
        return 1 if problems else 0
    try:
        cfg = _config(args)
    except ValueError as exc:
        parser.error(str(exc))
    if args.command == "run":
        result = run_workload(cfg)
        write_trace(result.events, args.trace)
        sys.stdout.write(result.metrics.report())
        return 0
    sys.stdout.write(compare_modes(cfg).report())
    return 0


if __name__ == "__main__":
    sys.exit(main())
