"""Baseline policies: class-blind P/D disaggregation and a basic
online-priority extension of it.

Neither uses the performance model at step granularity; offline decode runs
on strict instances only (relaxed instances never decode), which is exactly
the flexibility the co-location policy adds.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

from ..cluster.instance import Instance
from ..cluster.request import SimRequest
from ..perf.types import BottleneckKind
from .algorithms import InsufficientPoolError, select_eviction_victims
from .base import Policy


class BasePdPolicy(Policy):
    """Plain P/D disaggregation: offline requests are ordinary requests.

    One FCFS prefill queue per relaxed instance regardless of class, every
    decode pushed to a strict instance, batches grown oldest-first up to KV
    capacity.  No preemption, no eviction, no class awareness: under offline
    pressure online work queues behind it.
    """

    name = "base_pd"

    def on_arrival(self, req: SimRequest) -> None:
        self.route_online_arrival(req, preempt=False)

    def next_work(self, inst: Instance) -> tuple[str, object]:
        if inst.relaxed:
            if inst.online_prefill_q:
                return ("prefill", inst.online_prefill_q[0])
            return ("idle", None)
        merged = sorted(inst.online_pool + inst.offline_pool, key=lambda r: r.seq)
        n_fit = inst.kv_free // self.engine.per_token_kv
        batch = merged[: max(0, n_fit)]
        return ("decode", batch) if batch else ("idle", None)

    def on_prefill_done(self, inst: Instance, req: SimRequest) -> None:
        self.engine.request_push(req, inst)


class OnlinePriorityPolicy(Policy):
    """base P/D plus basic class awareness.

    Offline prefill runs only when no online prefill is pending, a static
    decode batch-size cap protects strict-instance latency, offline joins
    decode batches only below the cap, and offline work is preempted or
    parked during online traffic spikes.
    """

    name = "online_priority"

    def _post_bind(self) -> None:
        self.online_arrivals: deque[float] = deque()
        self.total_online_arrivals = 0
        self.decode_cap = self.pcfg.decode_cap or self._compute_decode_cap()

    def _compute_decode_cap(self) -> int:
        """Largest batch whose predicted latency at the median decode context
        stays within the TPOT bound (computed once per run)."""
        online = [r for r in self.engine.requests if r.is_online]
        pool = online or self.engine.requests
        if not pool:
            return 1
        ctxs = sorted(r.prompt_len + r.output_len // 2 for r in pool)
        median_ctx = ctxs[len(ctxs) // 2]
        predictor = self.engine.strict[0].predictor
        cap_tokens = self.engine.strict[0].hw.kv_capacity_bytes // self.engine.per_token_kv
        hi_bound = max(1, min(cap_tokens // max(1, median_ctx), 1 << 16))
        if predictor.decode([median_ctx]) > self.slo.tpot_slo:
            return 1
        lo, hi = 1, hi_bound
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if predictor.decode([median_ctx] * mid) <= self.slo.tpot_slo:
                lo = mid
            else:
                hi = mid - 1
        return lo

    def in_spike(self) -> bool:
        now = self.engine.now
        if now <= 0:
            return False
        window = self.pcfg.spike_window_s
        while self.online_arrivals and self.online_arrivals[0] < now - window:
            self.online_arrivals.popleft()
        short = len(self.online_arrivals) / window
        long_avg = self.total_online_arrivals / now
        return short > self.pcfg.spike_factor * long_avg

    def on_arrival(self, req: SimRequest) -> None:
        if req.is_online:
            self.online_arrivals.append(req.arrival_ts)
            self.total_online_arrivals += 1
            self.route_online_arrival(req, preempt=True)
        else:
            self.route_offline_arrival(req)

    def next_work(self, inst: Instance) -> tuple[str, object]:
        if inst.relaxed:
            if inst.online_prefill_q:
                return ("prefill", inst.online_prefill_q[0])
            if inst.offline_prefill_q:
                head = inst.offline_prefill_q[0]
                if head.layers_done > 0:
                    return ("prefill", head)
                if not self.in_spike():
                    return ("prefill", head)
            return ("idle", None)
        online = sorted(inst.online_pool, key=lambda r: r.seq)
        offline = sorted(inst.offline_pool, key=lambda r: r.seq)
        batch = list(online)
        if not self.in_spike():
            batch += offline[: max(0, self.decode_cap - len(online))]
        n_fit = inst.kv_free // self.engine.per_token_kv
        if len(batch) > n_fit:
            batch = batch[: max(0, n_fit)]
        return ("decode", batch) if batch else ("idle", None)

    def on_prefill_done(self, inst: Instance, req: SimRequest) -> None:
        self.engine.request_push(req, inst)

    def _select_shortest(self, inst: Instance, pool: list[SimRequest], needed_bytes: int) -> list[SimRequest]:
        return select_eviction_victims(
            pool,
            needed_bytes,
            BottleneckKind.MEMORY_BANDWIDTH_BOUND,
            bytes_of=lambda r: r.holdings.get(inst.idx, 0),
            length_of=lambda r: r.context_len,
            tiebreak=lambda r: r.seq,
        )

    def eviction_victims_for(self, inst: Instance, needed_bytes: int, req: SimRequest) -> Optional[list[SimRequest]]:
        if not req.is_online:
            return None
        running = inst.running_batch() or []
        pool = [r for r in inst.offline_pool if r not in running]
        try:
            return self._select_shortest(inst, pool, needed_bytes)
        except InsufficientPoolError:
            return None

    def make_room(self, inst: Instance, needed_bytes: int, req: SimRequest) -> bool:
        if not req.is_online:
            return False
        return self.reclaim_kv(inst, needed_bytes, lambda pool, need: self._select_shortest(inst, pool, need))
