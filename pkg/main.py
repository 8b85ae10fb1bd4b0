# main.py
"""
Command-line front end.

    python main.py run   --scenario scenarios/replica.json --out data/runs/replica
    python main.py check --samples 100 --seed 0
    python main.py bench --cycles 10000 --scenario scenarios/replica.json [--workers 4]
    python main.py plot  --log data/runs/replica/log.csv

Exit codes: 0 success, 1 scenario / audit failed, 2 config or usage error.
"""

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from config import BENCH_WORKERS, OUT_DIR, PLOT_DIR, RECORD_TIMING, SHOW_PROGRESS, setup_logging
from audits import run_audits
from bench import run_bench
from errors import ConfigError, EndoSimError
from scenario import load_scenario
from sim_visuals import generate_run_plots
from simulator import run_scenario, write_log, write_summary

logger = logging.getLogger("CLI")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

LOG_NAME = "log.csv"
SUMMARY_NAME = "summary.json"


@dataclass(frozen=True)
class RunArtifacts:
    log_path: Optional[Path]
    summary_path: Optional[Path]
    exit_code: int


# -------------------------------------------------------
# COMMANDS
# -------------------------------------------------------
def cmd_run(scenario_path: str, out_dir: str = OUT_DIR, record_timing: bool = RECORD_TIMING,
            progress: bool = SHOW_PROGRESS) -> RunArtifacts:
    try:
        scenario = load_scenario(scenario_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RunArtifacts(None, None, EXIT_CONFIG)

    result = run_scenario(scenario, record_timing=record_timing, progress=progress)
    out = Path(out_dir)
    log_path = write_log(result, out / LOG_NAME)
    summary_path = write_summary(result, out / SUMMARY_NAME)
    logger.info("[Run] wrote %s and %s", log_path, summary_path)
    return RunArtifacts(log_path, summary_path, EXIT_OK if result.completed else EXIT_FAILED)


def cmd_check(samples: int = 100, seed: int = 0) -> int:
    report = run_audits(samples=samples, seed=seed)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_FAILED


def cmd_bench(cycles: int, scenario_path: str, workers: int = BENCH_WORKERS, progress: bool = SHOW_PROGRESS) -> int:
    try:
        scenario = load_scenario(scenario_path)
        report = run_bench(scenario, cycles, workers=workers, progress=progress)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in report.lines():
        print(line)
    return EXIT_OK


def cmd_plot(log_path: str, out_dir: str = PLOT_DIR, threshold: float = 10.0) -> int:
    try:
        paths = generate_run_plots(log_path, out_dir, threshold)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p)
    return EXIT_OK


# -------------------------------------------------------
# ARGPARSE
# -------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="endohqp", description="RCM-constrained HQP endoscope simulator")
    parser.add_argument("--log-level", default=None, help="override ENDOSIM_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write CSV + JSON summary")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", default=OUT_DIR)
    run.add_argument("--no-timing", action="store_true", help="write solve_us as 0 for bit-identical logs")
    run.add_argument("--no-progress", action="store_true")

    check = sub.add_parser("check", help="finite-difference audits of the Jacobians and projector")
    check.add_argument("--samples", type=int, default=100)
    check.add_argument("--seed", type=int, default=0)

    bench = sub.add_parser("bench", help="per-cycle solve-time statistics")
    bench.add_argument("--cycles", type=int, default=10000)
    bench.add_argument("--scenario", required=True)
    bench.add_argument("--workers", type=int, default=BENCH_WORKERS)
    bench.add_argument("--no-progress", action="store_true")

    plot = sub.add_parser("plot", help="render PNG figures from a run log")
    plot.add_argument("--log", required=True)
    plot.add_argument("--out", default=PLOT_DIR)
    plot.add_argument("--threshold", type=float, default=10.0)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        setup_logging(args.log_level.upper())
    else:
        setup_logging()

    if args.command == "check" and args.samples < 1:
        parser.error("--samples must be >= 1")
    if args.command == "bench" and args.cycles < 100:
        parser.error("--cycles must be >= 100")
    if args.command == "bench" and args.workers < 1:
        parser.error("--workers must be >= 1")

    try:
        if args.command == "run":
            return cmd_run(args.scenario, args.out, record_timing=not args.no_timing and RECORD_TIMING,
                           progress=SHOW_PROGRESS and not args.no_progress).exit_code
        if args.command == "check":
            return cmd_check(args.samples, args.seed)
        if args.command == "bench":
            return cmd_bench(args.cycles, args.scenario, args.workers, progress=SHOW_PROGRESS and not args.no_progress)
        if args.command == "plot":
            return cmd_plot(args.log, args.out, args.threshold)
    except EndoSimError as exc:
        logger.exception("[CLI] %s failed: %s", args.command, exc)
        return EXIT_FAILED
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
