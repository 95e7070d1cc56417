"""``preissue-bench``: sweep pre-issuing depth and emit CSV (plus an optional figure)."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .bench import DEPTH_ENV, BenchSpec, depths_from_env, parse_depths, run_bench, write_csv
from .device import DeviceConfigError
from .workloads import EXECUTOR_KINDS, WORKLOADS

log = logging.getLogger("preissue.cli")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="preissue-bench",
        description="Run workloads across pre-issuing depths and check each run "
                    "against a synchronous reference.",
        epilog=f"{DEPTH_ENV}=1,8 overrides --depths.")
    p.add_argument("--workload", required=True, action="append", choices=sorted(WORKLOADS),
                   help="workload to run; repeat for several")
    p.add_argument("--depths", type=parse_depths, default=(0, 1, 4, 16),
                   help="comma-separated depths (default 0,1,4,16)")
    p.add_argument("--executor", choices=EXECUTOR_KINDS, default="sim")
    p.add_argument("--device-config", type=Path, help="device model file (key = value lines)")
    p.add_argument("--seed", type=int, default=0, help="fixture seed")
    p.add_argument("--reps", type=int, default=1, help="repetitions per depth")
    p.add_argument("--out", type=Path, help="CSV path (default stdout)")
    p.add_argument("--clients", type=int, default=1, help="concurrent clients, one thread each")
    p.add_argument("--small", action="store_true", help="use the reduced fixture shapes")
    p.add_argument("--figure", type=Path,
                   help="also render mean makespan by depth to this image file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        depths = depths_from_env(args.depths)
        specs = [BenchSpec(w, depths, args.executor, args.device_config, args.seed, args.reps,
                           args.out, args.clients, args.small) for w in args.workload]
        results = []
        for spec in specs:
            log.info("running %s on %s at depths %s", spec.workload, spec.executor, depths)
            results.append(run_bench(spec))
    except (ValueError, DeviceConfigError, OSError) as exc:
        print(f"preissue-bench: error: {exc}", file=sys.stderr)
        return 2

    rows = [row for res in results for row in res.rows]
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with args.out.open("w", newline="") as fh:
            write_csv(rows, fh)
    else:
        write_csv(rows, sys.stdout)
    if args.figure:
        from .plotting import plot_makespan

        plot_makespan(results, args.figure)
        log.info("figure written to %s", args.figure)
    if not all(res.ok for res in results):
        print("preissue-bench: synchrony check failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
