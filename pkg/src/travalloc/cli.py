"""Command line: ``travalloc {alloc,iter,mt-alloc,par-iter,memory,fuzz}``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench, oracle
from .pool import DEFAULT_BIN_CAPACITY


def _common(p: argparse.ArgumentParser, objects: int = 2_000_000) -> None:
    p.add_argument("--objects", type=int, default=objects, metavar="N")
    p.add_argument("--bin-size", type=int, default=DEFAULT_BIN_CAPACITY, metavar="N")
    p.add_argument("--threads", type=int, default=None, metavar="N")
    p.add_argument("--gap-percent", type=float, default=None, metavar="P")
    p.add_argument("--seed", type=int, default=0, metavar="S")
    p.add_argument("--reps", type=int, default=3, metavar="R")
    p.add_argument("--csv", default=None, metavar="PATH", help="append rows to this CSV file")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="travalloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("alloc", help="allocation time per allocator, bin-size sweep")
    _common(p)
    p.add_argument("--sweep", action="store_true",
                   help=f"sweep bin sizes {bench.BIN_SIZE_SWEEP} instead of --bin-size")

    p = sub.add_parser("iter", help="iteration time with gaps (default 0, 10, 50%%)")
    _common(p)

    p = sub.add_parser("mt-alloc", help="multi-threaded allocation, global lock vs shared pool")
    _common(p, objects=200_000)

    p = sub.add_parser("par-iter", help="partitioned parallel iteration")
    _common(p)

    p = sub.add_parser("memory", help="allocator accounting vs payload-only bytes")
    _common(p, objects=1_000_000)

    p = sub.add_parser("fuzz", help="check the pool against the reference model")
    _common(p, objects=100_000)
    p.add_argument("--mode", choices=("sequential", "exhaustive", "concurrent"),
                   default="sequential")
    p.add_argument("--depth", type=int, default=10, help="exhaustive depth")
    p.add_argument("--trace-out", metavar="PATH", help="write the reproducer trace here on failure")
    p.add_argument("--replay", metavar="PATH", help="replay a trace file instead of fuzzing")
    return parser


def _config(args) -> bench.BenchConfig:
    return bench.BenchConfig(
        objects=args.objects, bin_size=args.bin_size, threads=args.threads,
        gap_percent=args.gap_percent or 0.0, seed=args.seed, repetitions=args.reps,
        output=args.csv)


def _print(records) -> None:
    print(f"{'benchmark':<9} {'variant':<15} {'bin':>7} {'thr':>3} {'gap%':>5} "
          f"{'seconds':>10} {'ops/s':>12} {'bytes':>13} checksum")
    for r in records:
        if r.rep != "median":
            continue
        print(f"{r.benchmark:<9} {r.variant:<15} {r.bin_size:>7} {r.threads:>3} "
              f"{r.gap_percent:>5g} {r.seconds:>10.4f} {r.ops_per_sec:>12.4g} "
              f"{r.bytes_reserved:>13} {r.checksum}")


def _fuzz(args) -> int:
    if args.replay:
        with open(args.replay) as fh:
            ops = oracle.parse_trace(fh.read())
        failure, _ = oracle.replay(ops, args.bin_size)
        print("pass" if failure is None else f"FAIL: {failure}")
        return 0 if failure is None else 1
    if args.mode == "sequential":
        verdict = oracle.fuzz_sequential(args.seed, args.objects, args.bin_size)
    elif args.mode == "exhaustive":
        verdict = oracle.fuzz_exhaustive(args.bin_size, args.depth)
    else:
        verdict = oracle.fuzz_concurrent(args.seed, args.objects, args.bin_size,
                                         args.threads or 4)
    print(verdict.summary())
    if not verdict.passed:
        text = oracle.format_trace(verdict.trace)
        if args.trace_out:
            with open(args.trace_out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        if args.command == "fuzz":
            return _fuzz(args)
        cfg = _config(args)
        if args.command == "alloc":
            sizes = bench.BIN_SIZE_SWEEP if args.sweep else (cfg.bin_size,)
            records = bench.run_alloc_bench(cfg, sizes)
        elif args.command == "iter":
            gaps = (0.0, 10.0, 50.0) if args.gap_percent is None else (args.gap_percent,)
            records = bench.run_iter_bench(cfg, gaps)
        elif args.command == "mt-alloc":
            records = bench.run_mt_alloc_bench(cfg)
        elif args.command == "par-iter":
            records = bench.run_par_iter_bench(cfg)
        else:
            records = bench.report_memory(cfg)
        _print(records)
        if args.command == "par-iter":
            for k, s in bench.speedups(records).items():
                print(f"speedup threads={k}: {s:.2f}")
        if args.command == "memory":
            print(f"overhead vs payload-only: {bench.overhead_ratio(records):.1%}")
        if cfg.output:
            bench.write_csv(records, cfg.output)
    except OSError as exc:
        print(f"travalloc: {exc}", file=sys.stderr)
        return 2
    except (ValueError, oracle.ModelError) as exc:
        print(f"travalloc: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
