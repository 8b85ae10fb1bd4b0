# bench.py
"""
Per-cycle HQP solve-time benchmark.

 - runs the closed loop of a scenario for a cycle budget with timing recorded
 - optional sharding of the budget over independent controller instances
   (ProcessPoolExecutor), pooled statistics afterwards
 - statistics: mean / median / p99 / max of the combined two-level solve time in us
"""

import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from tqdm import tqdm

from config import BENCH_WORKERS, SHOW_PROGRESS, setup_logging
from errors import ConfigError
from scenario import Scenario
from simulator import run_scenario

logger = logging.getLogger("Bench")

MIN_CYCLES = 100


@dataclass(frozen=True)
class BenchReport:
    cycles: int
    workers: int
    mean_us: float
    median_us: float
    p99_us: float
    max_us: float
    wall_s: float

    def lines(self) -> List[str]:
        return [
            f"bench: {self.cycles} cycles, {self.workers} worker(s), wall {self.wall_s:.2f} s",
            f"  mean   {self.mean_us:9.1f} us",
            f"  median {self.median_us:9.1f} us",
            f"  p99    {self.p99_us:9.1f} us",
            f"  max    {self.max_us:9.1f} us",
        ]


def _shard_sizes(cycles: int, workers: int) -> List[int]:
    base, extra = divmod(cycles, workers)
    return [base + (1 if i < extra else 0) for i in range(workers) if base + (1 if i < extra else 0) > 0]


def bench_shard(s: Scenario, cycles: int, progress: bool = False) -> np.ndarray:
    """Solve times (us) of one independent closed-loop run of `cycles` steps."""
    shard = s.with_overrides(max_duration=max(s.max_duration, cycles * s.dt))
    result = run_scenario(shard, record_timing=True, progress=progress, max_cycles=cycles)
    if result.abort_reason:
        logger.warning("[Bench] shard stopped early after %d cycles: %s", len(result.records), result.abort_reason)
    return np.array([r.solve_us for r in result.records])


def _worker(args: Tuple[Scenario, int]) -> np.ndarray:
    setup_logging("WARNING")
    s, cycles = args
    try:
        return bench_shard(s, cycles)
    except Exception:
        logger.error("[Bench] worker failed:\n%s", traceback.format_exc())
        raise


def run_bench(s: Scenario, cycles: int, workers: int = BENCH_WORKERS, progress: bool = SHOW_PROGRESS) -> BenchReport:
    if cycles < MIN_CYCLES:
        raise ConfigError(f"bench needs at least {MIN_CYCLES} cycles, got {cycles}")
    workers = max(1, int(workers))
    t0 = time.time()

    if workers == 1:
        samples = bench_shard(s, cycles, progress=progress)
    else:
        shards = _shard_sizes(cycles, workers)
        parts = []
        with ProcessPoolExecutor(max_workers=len(shards)) as pool:
            futures = [pool.submit(_worker, (s, size)) for size in shards]
            for fut in tqdm(as_completed(futures), total=len(futures), desc="bench shards", disable=not progress):
                parts.append(fut.result())
        samples = np.concatenate(parts)

    if samples.size == 0:
        raise ConfigError("bench produced no samples (scenario aborted immediately)")
    report = BenchReport(
        cycles=int(samples.size), workers=workers,
        mean_us=float(np.mean(samples)), median_us=float(np.median(samples)),
        p99_us=float(np.percentile(samples, 99)), max_us=float(np.max(samples)),
        wall_s=time.time() - t0,
    )
    logger.info("[Bench] %s: mean %.1f us | median %.1f us | p99 %.1f us over %d cycles",
                s.name, report.mean_us, report.median_us, report.p99_us, report.cycles)
    return report
