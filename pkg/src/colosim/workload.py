"""Request traces: loading, rate scaling, and uniform-QPS offline streams.

Traces are flat tables (CSV or JSONL) with columns arrival_ts, prompt_len,
output_len, class, and an optional id.  Output lengths are replayed from the
trace; nothing is sampled from a model.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

ONLINE = "online"
OFFLINE = "offline"


class TraceFormatError(ValueError):
    """A trace file row failed validation."""


@dataclass(frozen=True)
class TraceRecord:
    id: str
    arrival_ts: float
    prompt_len: int
    output_len: int
    request_class: str  # ONLINE or OFFLINE

    def __post_init__(self) -> None:
        if self.prompt_len < 1 or self.output_len < 1:
            raise ValueError(f"record {self.id}: lengths must be >= 1")
        if self.arrival_ts < 0:
            raise ValueError(f"record {self.id}: arrival_ts must be >= 0")
        if self.request_class not in (ONLINE, OFFLINE):
            raise ValueError(f"record {self.id}: unknown class {self.request_class!r}")


class Trace:
    """An arrival-ordered sequence of trace records with unique ids."""

    def __init__(self, records: Iterable[TraceRecord]):
        recs = sorted(records, key=lambda r: (r.arrival_ts, r.id))
        seen: set[str] = set()
        for r in recs:
            if r.id in seen:
                raise ValueError(f"duplicate record id {r.id!r}")
            seen.add(r.id)
        self.records: list[TraceRecord] = recs

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __getitem__(self, idx: int) -> TraceRecord:
        return self.records[idx]

    @property
    def span(self) -> float:
        return self.records[-1].arrival_ts if self.records else 0.0

    def mean_prompt_len(self) -> float:
        return float(np.mean([r.prompt_len for r in self.records])) if self.records else 0.0

    def mean_output_len(self) -> float:
        return float(np.mean([r.output_len for r in self.records])) if self.records else 0.0


def _record_from_fields(fields: dict, line_no: int, default_id: str) -> TraceRecord:
    try:
        rid = str(fields.get("id") or default_id)
        return TraceRecord(
            id=rid,
            arrival_ts=float(fields["arrival_ts"]),
            prompt_len=int(fields["prompt_len"]),
            output_len=int(fields["output_len"]),
            request_class=str(fields["class"]).strip().lower(),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"line {line_no}: {exc}") from exc


def load_trace(path: str | Path, fmt: str | None = None) -> Trace:
    """Parse, validate, and sort a CSV or JSONL trace file.

    ``fmt`` defaults to the file extension (.csv / .jsonl).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv"
    fmt = fmt.lower()
    records: list[TraceRecord] = []
    if fmt == "csv":
        with path.open(newline="") as f:
            reader = csv.DictReader(f)
            for line_no, row in enumerate(reader, start=2):
                records.append(_record_from_fields(row, line_no, f"r{line_no - 1:06d}"))
    elif fmt == "jsonl":
        with path.open() as f:
            for line_no, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    fields = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise TraceFormatError(f"line {line_no}: invalid JSON: {exc}") from exc
                records.append(_record_from_fields(fields, line_no, f"r{line_no:06d}"))
    else:
        raise ValueError(f"unknown trace format {fmt!r} (expected csv or jsonl)")
    return Trace(records)


def save_trace(trace: Trace, path: str | Path, fmt: str | None = None) -> None:
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv"
    if fmt == "csv":
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["id", "arrival_ts", "prompt_len", "output_len", "class"])
            for r in trace:
                writer.writerow([r.id, repr(r.arrival_ts), r.prompt_len, r.output_len, r.request_class])
    else:
        with path.open("w") as f:
            for r in trace:
                f.write(
                    json.dumps(
                        {
                            "id": r.id,
                            "arrival_ts": r.arrival_ts,
                            "prompt_len": r.prompt_len,
                            "output_len": r.output_len,
                            "class": r.request_class,
                        }
                    )
                    + "\n"
                )


def scale_down(trace: Trace, keep_ratio: float, seed: int) -> Trace:
    """Thin a trace by independently keeping each record with ``keep_ratio``.

    Timestamps of kept records are unchanged, so burst shapes and durations
    survive; only the aggregate rate drops.
    """
    if not 0 < keep_ratio <= 1:
        raise ValueError("keep_ratio must be in (0, 1]")
    if keep_ratio == 1.0:
        return Trace(trace.records)
    rng = np.random.default_rng(seed)
    mask = rng.random(len(trace)) < keep_ratio
    return Trace(r for r, keep in zip(trace.records, mask) if keep)


def scale_up(trace: Trace, factor: float, seed: int) -> Trace:
    """Thicken a trace by replicating length pairs of existing records.

    Each replica copies a seeded-random source record's (prompt_len,
    output_len, class) and lands uniformly between the source's neighboring
    original arrivals, so local rate shape is preserved by construction and
    no timestamp leaves the original span.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1.0 or len(trace) == 0:
        return Trace(trace.records)
    rng = np.random.default_rng(seed)
    n = len(trace)
    extra_f = (factor - 1.0) * n
    n_extra = int(math.floor(extra_f))
    if rng.random() < extra_f - n_extra:
        n_extra += 1
    ts = np.array([r.arrival_ts for r in trace.records])
    src_idx = rng.integers(0, n, size=n_extra)
    lo = ts[np.maximum(src_idx - 1, 0)]
    hi = ts[np.minimum(src_idx + 1, n - 1)]
    new_ts = lo + rng.random(n_extra) * (hi - lo)
    replicas = []
    for k in range(n_extra):
        src = trace.records[int(src_idx[k])]
        replicas.append(replace(src, id=f"{src.id}#dup{k}", arrival_ts=float(new_ts[k])))
    return Trace(list(trace.records) + replicas)


def offline_stream(
    records: Sequence[TraceRecord] | Sequence[tuple[int, int]],
    qps: float,
    start_ts: float,
    count: int,
) -> Trace:
    """Uniformly spaced offline arrivals cycling through a length pool.

    ``records`` may be TraceRecords or raw (prompt_len, output_len) pairs;
    the pool is cycled when count exceeds its size.
    """
    if qps <= 0:
        raise ValueError("qps must be positive")
    if count < 0:
        raise ValueError("count must be >= 0")
    if count > 0 and not records:
        raise ValueError("empty record pool")
    out = []
    for k in range(count):
        src = records[k % len(records)]
        if isinstance(src, TraceRecord):
            prompt, output = src.prompt_len, src.output_len
        else:
            prompt, output = int(src[0]), int(src[1])
        out.append(
            TraceRecord(
                id=f"off{k:06d}",
                arrival_ts=start_ts + k / qps,
                prompt_len=prompt,
                output_len=output,
                request_class=OFFLINE,
            )
        )
    return Trace(out)


def rate_histogram(trace: Trace, bucket_seconds: float) -> list[int]:
    """Requests per bucket over [0, max arrival_ts]."""
    if bucket_seconds <= 0:
        raise ValueError("bucket_seconds must be positive")
    if len(trace) == 0:
        return []
    n_buckets = int(math.floor(trace.span / bucket_seconds)) + 1
    counts = [0] * n_buckets
    for r in trace:
        counts[int(r.arrival_ts // bucket_seconds)] += 1
    return counts


def save_histogram(counts: Sequence[int], bucket_seconds: float, path: str | Path) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bucket_start", "count"])
        for i, c in enumerate(counts):
            writer.writerow([repr(i * bucket_seconds), c])
