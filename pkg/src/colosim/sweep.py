"""Offline-QPS sweep: find the maximum offline load the cluster sustains
without pushing the online SLO violation rate over its threshold.

The evaluator is injectable so the search logic is unit-testable against
analytic violation curves; the real evaluator runs one full simulation per
QPS point.  Points are embarrassingly parallel and merged in QPS order, so
results are identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .cluster.config import SimConfig
from .cluster.engine import Engine
from .metrics import offline_goodput, violation_rate
from .workload import Trace, TraceRecord, offline_stream


class BaselineInfeasibleError(RuntimeError):
    """The online trace alone violates the SLO; rescale it before sweeping."""


@dataclass(frozen=True)
class SweepPoint:
    offline_qps: float
    online_violation_rate: float
    offline_goodput: float


@dataclass
class SweepResult:
    points: list[SweepPoint] = field(default_factory=list)
    max_effective_offline_qps: float = 0.0
    violation_threshold: float = 0.03

    def passing(self, qps: float) -> bool:
        for p in self.points:
            if p.offline_qps == qps:
                return p.online_violation_rate <= self.violation_threshold
        raise KeyError(qps)


def sweep_max_offline_qps(
    evaluate: Callable[[float], tuple[float, float]],
    qps_grid: Sequence[float],
    *,
    violation_threshold: float = 0.03,
    bisect_iters: int = 3,
    parallel_map=None,
) -> SweepResult:
    """Grid scan plus bisection refinement of the violation-rate crossing.

    ``evaluate(qps)`` returns (online violation rate, offline goodput).  The
    zero-offline baseline must pass the threshold or the sweep aborts.  The
    reported maximum is the largest tested QPS whose rate stayed within the
    threshold.
    """
    grid = sorted(set(float(q) for q in qps_grid if q > 0))
    result = SweepResult(violation_threshold=violation_threshold)

    base_rate, base_goodput = evaluate(0.0)
    result.points.append(SweepPoint(0.0, base_rate, base_goodput))
    if base_rate > violation_threshold:
        raise BaselineInfeasibleError(
            f"violation rate {base_rate:.4f} exceeds {violation_threshold} at zero "
            "offline load; rescale the online trace down first"
        )

    mapper = parallel_map if parallel_map is not None else lambda f, xs: [f(x) for x in xs]
    for qps, (rate, goodput) in zip(grid, mapper(evaluate, grid)):
        result.points.append(SweepPoint(qps, rate, goodput))

    failing = [p.offline_qps for p in result.points if p.online_violation_rate > violation_threshold]
    if failing:
        q_hi = min(failing)
        passing_below = [
            p.offline_qps
            for p in result.points
            if p.online_violation_rate <= violation_threshold and p.offline_qps < q_hi
        ]
        q_lo = max(passing_below) if passing_below else 0.0
        for _ in range(bisect_iters):
            mid = (q_lo + q_hi) / 2.0
            if mid in (q_lo, q_hi):
                break
            rate, goodput = evaluate(mid)
            result.points.append(SweepPoint(mid, rate, goodput))
            if rate <= violation_threshold:
                q_lo = mid
            else:
                q_hi = mid

    result.points.sort(key=lambda p: p.offline_qps)
    result.max_effective_offline_qps = max(
        (p.offline_qps for p in result.points if p.online_violation_rate <= violation_threshold),
        default=0.0,
    )
    return result


# ---------------------------------------------------------------------------
# Simulation-backed evaluator


@dataclass(frozen=True)
class SimSweepTask:
    """Picklable closure: one simulation per offline QPS point."""

    config: SimConfig
    online: Trace
    offline_records: tuple[TraceRecord, ...]
    span_s: float

    def __call__(self, qps: float) -> tuple[float, float]:
        if qps <= 0:
            offline = Trace([])
        else:
            count = int(math.ceil(qps * self.span_s))
            offline = offline_stream(self.offline_records, qps, 0.0, count)
        log = Engine(self.config, self.online, offline).run()
        return (
            violation_rate(log, self.config.slo),
            offline_goodput(log),
        )


def run_sweep(
    config: SimConfig,
    online: Trace,
    offline_records: Sequence[TraceRecord] | Sequence[tuple[int, int]],
    qps_grid: Sequence[float],
    *,
    bisect_iters: int = 3,
    workers: int = 1,
    span_s: Optional[float] = None,
) -> SweepResult:
    """Sweep a simulation scenario over offline QPS points."""
    span = span_s if span_s is not None else (config.horizon_s or online.span)
    records = tuple(
        r if isinstance(r, TraceRecord) else TraceRecord(
            id=f"pool{i:06d}", arrival_ts=0.0, prompt_len=int(r[0]),
            output_len=int(r[1]), request_class="offline",
        )
        for i, r in enumerate(offline_records)
    )
    task = SimSweepTask(config=config, online=online, offline_records=records, span_s=span)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return sweep_max_offline_qps(
                task,
                qps_grid,
                violation_threshold=config.slo.violation_threshold,
                bisect_iters=bisect_iters,
                parallel_map=lambda f, xs: list(pool.map(f, xs)),
            )
    return sweep_max_offline_qps(
        task,
        qps_grid,
        violation_threshold=config.slo.violation_threshold,
        bisect_iters=bisect_iters,
    )


def write_sweep_csv(result: SweepResult, path) -> None:
    import csv
    from pathlib import Path

    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["offline_qps", "online_violation_rate", "offline_goodput_tokens_per_s"])
        for p in result.points:
            w.writerow([repr(p.offline_qps), repr(p.online_violation_rate), repr(p.offline_goodput)])
