"""Per-request latency metrics, SLO accounting, and result exports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cluster.config import SLOConfig
from .workload import OFFLINE, ONLINE


@dataclass
class RequestMetrics:
    id: str
    request_class: str
    arrival_ts: float
    prompt_len: int
    output_len: int
    first_token_ts: Optional[float]
    completion_ts: Optional[float]
    emit_ts: list[float]
    eviction_count: int
    migration_count: int

    @property
    def complete(self) -> bool:
        return self.completion_ts is not None


@dataclass
class MetricsLog:
    requests: list[RequestMetrics] = field(default_factory=list)
    utilization: list[tuple[float, int, float, int]] = field(default_factory=list)
    # (sample time, instance idx, busy fraction since last sample, kv bytes used)
    preemptions: int = 0
    migrations: int = 0
    evictions: int = 0
    preemption_delays: list[float] = field(default_factory=list)
    duration_s: float = 0.0
    in_flight_ids: list[str] = field(default_factory=list)
    event_log: Optional[list[dict]] = None


def ttft(rec: RequestMetrics) -> float:
    """Seconds from arrival to first emitted token."""
    if rec.first_token_ts is None:
        raise ValueError(f"request {rec.id} emitted no tokens")
    return rec.first_token_ts - rec.arrival_ts


def tpot(rec: RequestMetrics) -> float:
    """Mean inter-token gap after the first token."""
    if len(rec.emit_ts) < 2:
        raise ValueError(f"request {rec.id} needs >= 2 tokens for tpot")
    return (rec.emit_ts[-1] - rec.emit_ts[0]) / (len(rec.emit_ts) - 1)


def is_violation(rec: RequestMetrics, slo: SLOConfig) -> bool:
    """A request violates if unfinished at the horizon (conservative) or if
    either latency metric exceeds its bound."""
    if not rec.complete:
        return True
    if ttft(rec) > slo.ttft_slo:
        return True
    if len(rec.emit_ts) >= 2 and tpot(rec) > slo.tpot_slo:
        return True
    return False


def violation_rate(log: MetricsLog, slo: SLOConfig, request_class: Optional[str] = ONLINE) -> float:
    recs = [r for r in log.requests if request_class is None or r.request_class == request_class]
    if not recs:
        return 0.0
    return sum(1 for r in recs if is_violation(r, slo)) / len(recs)


def offline_goodput(log: MetricsLog) -> float:
    """Completed offline tokens per second; recomputed work is not re-counted."""
    if log.duration_s <= 0:
        return 0.0
    tokens = sum(r.output_len for r in log.requests if r.request_class == OFFLINE and r.complete)
    return tokens / log.duration_s


def _latency_stats(values: list[float]) -> dict:
    if not values:
        return {"count": 0}
    arr = np.array(values)
    return {
        "count": len(values),
        "mean": float(arr.mean()),
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
        "p99": float(np.percentile(arr, 99)),
        "max": float(arr.max()),
    }


def summarize(log: MetricsLog, slo: SLOConfig) -> dict:
    out: dict = {
        "duration_s": log.duration_s,
        "counters": {
            "preemptions": log.preemptions,
            "migrations": log.migrations,
            "evictions": log.evictions,
        },
        "in_flight": len(log.in_flight_ids),
        "offline_goodput_tokens_per_s": offline_goodput(log),
    }
    for klass in (ONLINE, OFFLINE):
        recs = [r for r in log.requests if r.request_class == klass]
        ttfts = [ttft(r) for r in recs if r.first_token_ts is not None]
        tpots = [tpot(r) for r in recs if len(r.emit_ts) >= 2]
        tpot_undefined = sum(1 for r in recs if r.complete and len(r.emit_ts) < 2)
        gaps: list[float] = []
        for r in recs:
            gaps.extend(np.diff(r.emit_ts).tolist() if len(r.emit_ts) >= 2 else [])
        out[klass] = {
            "requests": len(recs),
            "completed": sum(1 for r in recs if r.complete),
            "violation_rate": violation_rate(log, slo, klass),
            "ttft": _latency_stats(ttfts),
            "tpot": _latency_stats(tpots),
            "tpot_undefined": tpot_undefined,
            "p99_token_gap": float(np.percentile(gaps, 99)) if gaps else None,
        }
    if log.utilization:
        by_inst: dict[int, list[float]] = {}
        kv_by_inst: dict[int, list[int]] = {}
        for _, idx, busy, kv in log.utilization:
            by_inst.setdefault(idx, []).append(busy)
            kv_by_inst.setdefault(idx, []).append(kv)
        out["utilization"] = {
            str(idx): {
                "mean_busy_fraction": float(np.mean(vals)),
                "peak_kv_bytes": max(kv_by_inst[idx]),
            }
            for idx, vals in sorted(by_inst.items())
        }
    return out


def write_metrics(log: MetricsLog, slo: SLOConfig, out_dir: str | Path) -> list[Path]:
    """Write per-request CSV, summary JSON, utilization CSV, and (when
    recorded) the event JSONL.  Output is deterministic for a given log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    per_request = out / "per_request.csv"
    with per_request.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "id", "class", "arrival_ts", "prompt_len", "output_len",
                "first_token_ts", "completion_ts", "tokens_emitted",
                "ttft", "tpot", "evictions", "migrations", "violation",
            ]
        )
        for r in log.requests:
            t1 = repr(ttft(r)) if r.first_token_ts is not None else ""
            tp = repr(tpot(r)) if len(r.emit_ts) >= 2 else ""
            w.writerow(
                [
                    r.id, r.request_class, repr(r.arrival_ts), r.prompt_len, r.output_len,
                    repr(r.first_token_ts) if r.first_token_ts is not None else "",
                    repr(r.completion_ts) if r.completion_ts is not None else "",
                    len(r.emit_ts), t1, tp, r.eviction_count, r.migration_count,
                    int(is_violation(r, slo)),
                ]
            )
    written.append(per_request)

    summary = out / "summary.json"
    summary.write_text(json.dumps(summarize(log, slo), indent=2, sort_keys=True) + "\n")
    written.append(summary)

    util = out / "utilization.csv"
    with util.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "instance", "busy_fraction", "kv_used_bytes"])
        for t, idx, busy, kv in log.utilization:
            w.writerow([repr(t), idx, repr(busy), kv])
    written.append(util)

    if log.event_log is not None:
        events = out / "events.jsonl"
        with events.open("w") as f:
            for ev in log.event_log:
                f.write(json.dumps(ev, sort_keys=True) + "\n")
        written.append(events)
    return written
