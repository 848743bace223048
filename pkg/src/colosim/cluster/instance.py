"""Execution-unit state: one latency-relaxed or latency-strict instance."""

from __future__ import annotations

from bisect import insort
from dataclasses import dataclass, field
from typing import Optional

from ..perf.latency import IterationPredictor
from ..perf.types import HardwareProfile, ModelSpec
from .config import InstanceKind
from .request import SimRequest


@dataclass
class PrefillRun:
    request: SimRequest
    per_layer_s: float
    layer_end_time: float


@dataclass
class DecodeRun:
    batch: list[SimRequest]
    predicted_s: float
    all_resident_included: bool
    end_time: float


@dataclass
class Instance:
    idx: int
    kind: InstanceKind
    hw: HardwareProfile
    model: ModelSpec
    predictor: IterationPredictor
    kv_used: int = 0
    activity: object = None       # None | PrefillRun | DecodeRun
    preempt_pending: bool = False
    online_prefill_q: list[SimRequest] = field(default_factory=list)
    offline_prefill_q: list[SimRequest] = field(default_factory=list)
    online_pool: list[SimRequest] = field(default_factory=list)
    offline_pool: list[SimRequest] = field(default_factory=list)
    busy_s: float = 0.0

    @property
    def relaxed(self) -> bool:
        return self.kind is InstanceKind.LATENCY_RELAXED

    @property
    def strict(self) -> bool:
        return self.kind is InstanceKind.LATENCY_STRICT

    @property
    def kv_free(self) -> int:
        return self.hw.kv_capacity_bytes - self.kv_used

    @property
    def idle(self) -> bool:
        return self.activity is None

    def pool_add(self, req: SimRequest) -> None:
        pool = self.online_pool if req.is_online else self.offline_pool
        insort(pool, req, key=lambda r: r.seq)

    def pool_remove(self, req: SimRequest) -> None:
        pool = self.online_pool if req.is_online else self.offline_pool
        pool.remove(req)

    def prefill_queue_len(self, online: bool) -> int:
        n = len(self.online_prefill_q if online else self.offline_prefill_q)
        run = self.activity
        if isinstance(run, PrefillRun) and run.request.is_online == online:
            n += 1
        return n

    def running_batch(self) -> Optional[list[SimRequest]]:
        return self.activity.batch if isinstance(self.activity, DecodeRun) else None
