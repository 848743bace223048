"""Deterministic discrete-event engine for the disaggregated cluster.

Single-threaded by design: one event heap, ties broken by a fixed event-kind
order then a sequence number, so identical inputs replay identically.
Policies make decisions; the engine owns all mechanics (KV accounting,
prefill layer stepping, transfers, evictions) and never mutates state outside
an event handler.
"""

from __future__ import annotations

import heapq
from typing import Iterable, Optional, Sequence


from ..metrics import MetricsLog, RequestMetrics
from ..perf.costs import kv_cache_bytes
from ..perf.latency import IterationPredictor
from ..workload import OFFLINE, ONLINE, Trace
from .config import InstanceKind, SimConfig
from .instance import DecodeRun, Instance, PrefillRun
from .request import RequestState, SimRequest


class SchedulingError(RuntimeError):
    """A policy asked the engine for an illegal action."""


class InfeasibleScenarioError(RuntimeError):
    """The scenario cannot run (e.g., a request can never fit in KV)."""


class InvariantViolation(AssertionError):
    """An engine invariant was broken (always a bug)."""


# Completion-style events drain before arrivals so freshly freed resources are
# schedulable; any fixed order would do for determinism.
TRANSFER_DONE = 0
DECODE_STEP_DONE = 1
PREFILL_LAYER_DONE = 2
PREFILL_DONE = 3
ARRIVAL = 4
PULL_SIGNAL = 5
SWEEP_TICK = 6

_KIND_NAMES = {
    TRANSFER_DONE: "transfer_done",
    DECODE_STEP_DONE: "decode_step_done",
    PREFILL_LAYER_DONE: "prefill_layer_done",
    PREFILL_DONE: "prefill_done",
    ARRIVAL: "arrival",
    PULL_SIGNAL: "pull_signal",
    SWEEP_TICK: "sweep_tick",
}


class Engine:
    def __init__(
        self,
        config: SimConfig,
        online: Trace,
        offline: Trace,
        policy=None,
    ):
        from ..scheduler import make_policy

        self.config = config
        self.model = config.model
        self.now = 0.0
        self.per_token_kv = kv_cache_bytes(config.model, 1)
        self.migration_bw = config.migration_bandwidth or config.strict_hw.comm_bandwidth

        self.instances: list[Instance] = []
        for _ in range(config.num_relaxed):
            self._add_instance(InstanceKind.LATENCY_RELAXED, config.relaxed_hw)
        for _ in range(config.num_strict):
            self._add_instance(InstanceKind.LATENCY_STRICT, config.strict_hw)
        self.relaxed = [i for i in self.instances if i.relaxed]
        self.strict = [i for i in self.instances if i.strict]

        self._heap: list = []
        self._push_seq = 0
        self._nontick_pending = 0
        self.requests: list[SimRequest] = []
        self.pending_pushes: list[SimRequest] = []
        self._retrying = False
        self._sched_depth = 0
        self._deferred_kicks: set[int] = set()

        merged = sorted(list(online) + list(offline), key=lambda r: (r.arrival_ts, r.id))
        for seq, rec in enumerate(merged):
            req = SimRequest.from_trace(seq, rec)
            if req.prompt_len + req.output_len > self._max_tokens_capacity():
                raise InfeasibleScenarioError(
                    f"request {req.id}: footprint of {req.prompt_len + req.output_len} tokens "
                    "exceeds every instance's KV capacity"
                )
            self.requests.append(req)
            self._schedule(rec.arrival_ts, ARRIVAL, req=req)

        self.policy = policy if policy is not None else make_policy(config)
        self.policy.bind(self)

        # Metrics and audit state.
        self.preemptions = 0
        self.migrations = 0
        self.evictions = 0
        self.kv_reclaims = 0
        self.preemption_delays: list[float] = []
        self.preemption_audit: list[tuple[float, float]] = []  # (delay, layer latency)
        self.eviction_log: list[tuple[float, str, int]] = []   # (t, id, recompute tokens)
        self.prefill_work_log: list[tuple[str, int]] = []      # (id, tokens processed)
        self.event_log: Optional[list[dict]] = [] if config.record_events else None
        self._samples: list[tuple[float, int, float, int]] = []
        self._last_busy = [0.0] * len(self.instances)
        if self.requests:
            self._schedule(config.sample_period_s, SWEEP_TICK)

    # ------------------------------------------------------------------
    # Plumbing

    def _add_instance(self, kind: InstanceKind, hw) -> None:
        self.instances.append(
            Instance(
                idx=len(self.instances),
                kind=kind,
                hw=hw,
                model=self.model,
                predictor=IterationPredictor(self.model, hw),
            )
        )

    def _max_tokens_capacity(self) -> int:
        return max(i.hw.kv_capacity_bytes for i in self.instances) // self.per_token_kv

    def _schedule(self, t: float, kind: int, **payload) -> None:
        self._push_seq += 1
        if kind != SWEEP_TICK:
            self._nontick_pending += 1
        heapq.heappush(self._heap, (t, kind, self._push_seq, payload))

    def _log_event(self, kind: int, payload: dict) -> None:
        if self.event_log is None:
            return
        entry = {"t": self.now, "kind": _KIND_NAMES[kind]}
        for key, val in payload.items():
            if isinstance(val, SimRequest):
                entry[key] = val.id
            elif isinstance(val, Instance):
                entry[key] = val.idx
            elif isinstance(val, DecodeRun):
                entry["batch"] = [r.id for r in val.batch]
            elif isinstance(val, (int, float, str, bool)) or val is None:
                entry[key] = val
            elif hasattr(val, "mode"):  # length preference on pull signals
                entry[key] = {"mode": val.mode, "limit": val.limit}
        self.event_log.append(entry)

    def _alloc(self, inst: Instance, req: SimRequest, nbytes: int) -> None:
        if nbytes < 0:
            raise InvariantViolation("negative allocation")
        if inst.kv_used + nbytes > inst.hw.kv_capacity_bytes:
            raise InvariantViolation(
                f"instance {inst.idx}: KV overcommit ({inst.kv_used} + {nbytes})"
            )
        inst.kv_used += nbytes
        req.holdings[inst.idx] = req.holdings.get(inst.idx, 0) + nbytes

    def _free(self, inst: Instance, req: SimRequest) -> int:
        held = req.holdings.pop(inst.idx, 0)
        inst.kv_used -= held
        if inst.kv_used < 0:
            raise InvariantViolation(f"instance {inst.idx}: negative KV use")
        return held

    def _check_invariants(self) -> None:
        for inst in self.instances:
            if not 0 <= inst.kv_used <= inst.hw.kv_capacity_bytes:
                raise InvariantViolation(
                    f"instance {inst.idx}: kv_used {inst.kv_used} outside "
                    f"[0, {inst.hw.kv_capacity_bytes}]"
                )

    # ------------------------------------------------------------------
    # Main loop

    def step(self) -> Optional[tuple[float, int]]:
        """Process the next event; None once the heap drains or the horizon
        passes.  Exposed for white-box tests and debugging."""
        if not self._heap:
            return None
        t, kind, _, payload = heapq.heappop(self._heap)
        if self.config.horizon_s is not None and t > self.config.horizon_s:
            self._heap.clear()
            self._nontick_pending = 0
            return None
        if kind != SWEEP_TICK:
            self._nontick_pending -= 1
        self.now = t
        self._log_event(kind, payload)
        if kind == ARRIVAL:
            self._on_arrival(payload["req"])
        elif kind == PREFILL_LAYER_DONE:
            self._on_prefill_layer_done(payload["inst"], payload["req"])
        elif kind == PREFILL_DONE:
            self._on_prefill_done(payload["inst"], payload["req"])
        elif kind == DECODE_STEP_DONE:
            self._on_decode_step_done(payload["inst"], payload["run"])
        elif kind == TRANSFER_DONE:
            self._on_transfer_done(
                payload["req"], payload["src"], payload["dst"], payload["emit_token"]
            )
        elif kind == PULL_SIGNAL:
            self.policy.on_pull_signal(payload["strict_inst"], payload["relaxed_inst"], payload["pref"])
        elif kind == SWEEP_TICK:
            self._on_tick()
        if self.config.check_invariants:
            self._check_invariants()
        return t, kind

    def run(self) -> MetricsLog:
        last_t = 0.0
        while True:
            out = self.step()
            if out is None:
                break
            last_t = out[0]
        horizon = self.config.horizon_s
        duration = horizon if horizon is not None else last_t
        return self._build_metrics(duration)

    def _build_metrics(self, duration: float) -> MetricsLog:
        log = MetricsLog(
            preemptions=self.preemptions,
            migrations=self.migrations,
            evictions=self.evictions,
            preemption_delays=list(self.preemption_delays),
            duration_s=duration,
            utilization=list(self._samples),
            event_log=self.event_log,
        )
        for req in self.requests:
            log.requests.append(
                RequestMetrics(
                    id=req.id,
                    request_class=ONLINE if req.is_online else OFFLINE,
                    arrival_ts=req.arrival_ts,
                    prompt_len=req.prompt_len,
                    output_len=req.output_len,
                    first_token_ts=req.first_token_ts,
                    completion_ts=req.completion_ts,
                    emit_ts=list(req.emit_ts),
                    eviction_count=req.eviction_count,
                    migration_count=req.migration_count,
                )
            )
            if not req.complete:
                log.in_flight_ids.append(req.id)
        return log

    # ------------------------------------------------------------------
    # Event handlers

    def _on_arrival(self, req: SimRequest) -> None:
        self.policy.on_arrival(req)

    def _on_prefill_layer_done(self, inst: Instance, req: SimRequest) -> None:
        run = inst.activity
        if not isinstance(run, PrefillRun) or run.request is not req:
            raise InvariantViolation("stale prefill layer event")
        inst.busy_s += run.per_layer_s
        req.layers_done += 1
        if req.layers_done >= self.model.num_layers:
            inst.preempt_pending = False
            self._schedule(self.now, PREFILL_DONE, inst=inst, req=req)
        elif inst.preempt_pending and not req.is_online:
            # Halt at the layer boundary; progress and KV are retained.
            inst.preempt_pending = False
            inst.activity = None
            req.set_state(RequestState.QUEUED)
            inst.offline_prefill_q.insert(0, req)
            self.kick(inst)
        else:
            run.layer_end_time = self.now + run.per_layer_s
            self._schedule(run.layer_end_time, PREFILL_LAYER_DONE, inst=inst, req=req)

    def _on_prefill_done(self, inst: Instance, req: SimRequest) -> None:
        run = inst.activity
        if not isinstance(run, PrefillRun) or run.request is not req:
            raise InvariantViolation("stale prefill done event")
        inst.activity = None
        req.kv_tokens = req.prefill_length
        self.prefill_work_log.append((req.id, req.prefill_length))
        if req.tokens_emitted + 1 >= req.output_len:
            # The pass's token is the request's last: done without decoding.
            self._emit_token(req)
            self._finalize(req)
        else:
            self.policy.on_prefill_done(inst, req)
        self.kick(inst)
        self._retry_pending()

    def _on_decode_step_done(self, inst: Instance, run: DecodeRun) -> None:
        if inst.activity is not run:
            raise InvariantViolation("stale decode step event")
        inst.activity = None
        for req in run.batch:
            req.kv_tokens += 1
            self._emit_token(req)
            if req.tokens_emitted >= req.output_len:
                inst.pool_remove(req)
                self._finalize(req)
        self.policy.after_decode_step(inst, run)
        self._retry_pending()
        self.kick(inst)

    def _on_transfer_done(self, req: SimRequest, src: Instance, dst: Instance, emit_token: bool) -> None:
        self._free(src, req)
        req.instance_idx = dst.idx
        req.set_state(RequestState.DECODING)
        if emit_token:
            self._emit_token(req)
        if req.tokens_emitted >= req.output_len:
            self._free(dst, req)
            self._finalize(req)
        else:
            dst.pool_add(req)
        self.kick(dst)
        self.kick(src)
        self._retry_pending()

    def _on_tick(self) -> None:
        period = self.config.sample_period_s
        for inst in self.instances:
            frac = (inst.busy_s - self._last_busy[inst.idx]) / period
            self._last_busy[inst.idx] = inst.busy_s
            self._samples.append((self.now, inst.idx, frac, inst.kv_used))
        next_t = self.now + period
        if self._nontick_pending > 0 and (
            self.config.horizon_s is None or next_t <= self.config.horizon_s
        ):
            self._schedule(next_t, SWEEP_TICK)

    def _emit_token(self, req: SimRequest) -> None:
        req.tokens_emitted += 1
        req.emit_ts.append(self.now)
        if req.first_token_ts is None:
            req.first_token_ts = self.now

    def _finalize(self, req: SimRequest) -> None:
        for idx in list(req.holdings):
            self._free(self.instances[idx], req)
        req.set_state(RequestState.COMPLETE)
        req.completion_ts = self.now

    # ------------------------------------------------------------------
    # Operations invoked by policies

    def _begin_scheduling(self) -> None:
        self._sched_depth += 1

    def _end_scheduling(self) -> None:
        # Kicks requested mid-operation (eviction requeues) run only once the
        # outermost scheduling call finishes, so work starts are never
        # re-entered while their own bookkeeping is in flight.
        self._sched_depth -= 1
        if self._sched_depth == 0:
            while self._deferred_kicks:
                idx = min(self._deferred_kicks)
                self._deferred_kicks.discard(idx)
                self.kick(self.instances[idx])

    def kick(self, inst: Instance) -> None:
        """Start the instance's next unit of work if it is idle."""
        if not inst.idle:
            return
        if self._sched_depth > 0:
            self._deferred_kicks.add(inst.idx)
            return
        kind, arg = self.policy.next_work(inst)
        if kind == "prefill":
            self.start_prefill(inst, arg)
        elif kind == "decode":
            self.start_decode(inst, arg)
        elif kind != "idle":
            raise SchedulingError(f"unknown work kind {kind!r}")

    def start_prefill(self, inst: Instance, req: SimRequest) -> bool:
        if not inst.relaxed:
            raise SchedulingError("prefill may only run on latency-relaxed instances")
        if not inst.idle:
            raise SchedulingError("instance busy")
        self._begin_scheduling()
        try:
            needed_total = req.prefill_length * self.per_token_kv
            if needed_total > inst.hw.kv_capacity_bytes:
                raise InfeasibleScenarioError(
                    f"request {req.id}: prefill footprint {needed_total} exceeds "
                    f"instance {inst.idx} capacity {inst.hw.kv_capacity_bytes}"
                )
            need_more = needed_total - req.holdings.get(inst.idx, 0)
            if need_more > inst.kv_free:
                self.policy.make_room(inst, need_more - inst.kv_free, req)
                if need_more > inst.kv_free:
                    return False  # stalled; stays queued until something frees
            queue = inst.online_prefill_q if req in inst.online_prefill_q else inst.offline_prefill_q
            queue.remove(req)
            self._alloc(inst, req, need_more)
            req.set_state(RequestState.PREFILLING)
            req.instance_idx = inst.idx
            total = inst.predictor.prefill([req.prefill_length])
            per_layer = total / self.model.num_layers
            end = self.now + per_layer
            inst.activity = PrefillRun(request=req, per_layer_s=per_layer, layer_end_time=end)
            self._schedule(end, PREFILL_LAYER_DONE, inst=inst, req=req)
            return True
        finally:
            self._end_scheduling()

    def start_decode(self, inst: Instance, batch: Sequence[SimRequest]) -> bool:
        if not inst.idle:
            raise SchedulingError("instance busy")
        batch = list(batch)
        if not batch:
            return False
        self._begin_scheduling()
        try:
            for req in batch:
                if req.is_online and not inst.strict:
                    raise SchedulingError("online decode may only run on latency-strict instances")
                if req.state is not RequestState.DECODING or req.holdings.get(inst.idx, 0) == 0:
                    raise SchedulingError(f"request {req.id} not resident for decode")
            growth = len(batch) * self.per_token_kv
            if growth > inst.kv_free:
                batch = self.policy.reselect_on_capacity(inst, batch)
                if not batch:
                    return False
                growth = len(batch) * self.per_token_kv
                if growth > inst.kv_free:
                    raise InvariantViolation("reselected batch still exceeds capacity")
            all_included = len(batch) == len(inst.online_pool) + len(inst.offline_pool)
            for req in batch:
                self._alloc(inst, req, self.per_token_kv)
            contexts = [r.context_len for r in batch]
            dur = inst.predictor.decode(contexts)
            run = DecodeRun(
                batch=batch,
                predicted_s=dur,
                all_resident_included=all_included,
                end_time=self.now + dur,
            )
            inst.activity = run
            inst.busy_s += dur
            self._schedule(run.end_time, DECODE_STEP_DONE, inst=inst, run=run)
            return True
        finally:
            self._end_scheduling()

    def preempt_prefill(self, inst: Instance) -> float:
        """Halt the instance's offline prefill at the next layer boundary.

        Returns the remaining time of the in-flight layer.
        """
        run = inst.activity
        if not inst.relaxed or not isinstance(run, PrefillRun):
            raise SchedulingError("no prefill running to preempt")
        if run.request.is_online:
            raise SchedulingError("online prefill may not be preempted")
        remaining = run.layer_end_time - self.now
        if remaining > run.per_layer_s + 1e-12:
            raise InvariantViolation("preemption delay exceeds one layer")
        if not inst.preempt_pending:
            inst.preempt_pending = True
            self.preemptions += 1
            self.preemption_delays.append(remaining)
            self.preemption_audit.append((remaining, run.per_layer_s))
            self.policy.on_preemption(self.now)
        return remaining

    def evict(self, inst: Instance, victims: Iterable[SimRequest]) -> int:
        """Evict offline decoding requests; they re-enter a relaxed prefill
        queue with full recomputation (prompt plus emitted tokens)."""
        victims = list(victims)
        running = inst.running_batch() or []
        freed = 0
        self._begin_scheduling()
        try:
            for v in sorted(victims, key=lambda r: r.seq):
                if v.is_online:
                    raise SchedulingError(f"refusing to evict online request {v.id}")
                if v in running:
                    raise SchedulingError(f"request {v.id} is in the running batch")
                if v not in inst.offline_pool:
                    raise SchedulingError(f"request {v.id} not resident on instance {inst.idx}")
                inst.pool_remove(v)
                freed += self._free(inst, v)
                v.set_state(RequestState.EVICTED)
                v.eviction_count += 1
                v.prefill_length = v.prompt_len + v.tokens_emitted
                v.kv_tokens = 0
                v.layers_done = 0
                v.instance_idx = None
                self.eviction_log.append((self.now, v.id, v.prefill_length))
                self.evictions += 1
                v.set_state(RequestState.QUEUED)
                target = min(self.relaxed, key=lambda i: (len(i.offline_prefill_q), i.idx))
                target.offline_prefill_q.append(v)
                self.policy.on_eviction(self.now)
            for r in self.relaxed:
                self.kick(r)
        finally:
            self._end_scheduling()
        return freed

    def reclaim_halted_kv(self, inst: Instance, req: SimRequest) -> int:
        """Drop a halted prefill's partial-layer KV to relieve pressure."""
        if req.state is not RequestState.QUEUED or req.layers_done == 0:
            return 0
        freed = self._free(inst, req)
        req.layers_done = 0
        self.kv_reclaims += 1
        return freed

    def migrate(self, req: SimRequest, src: Instance, dst: Instance, *, emit_token: bool = False) -> bool:
        """Move a request's KV from src to dst; capacity is reserved on dst at
        initiation and released on src at completion.  Returns False when dst
        lacks capacity (caller must evict first)."""
        nbytes = req.kv_tokens * self.per_token_kv
        if nbytes > dst.kv_free:
            return False
        if req.state is RequestState.DECODING:
            src.pool_remove(req)
            req.set_state(RequestState.AWAITING_TRANSFER)
            self.migrations += 1
            req.migration_count += 1
        elif req.state is not RequestState.AWAITING_TRANSFER:
            raise SchedulingError(f"request {req.id} not movable in state {req.state}")
        self._alloc(dst, req, nbytes)
        self._schedule(
            self.now + nbytes / self.migration_bw,
            TRANSFER_DONE,
            req=req,
            src=src,
            dst=dst,
            emit_token=emit_token,
        )
        return True

    def enter_local_pool(self, inst: Instance, req: SimRequest) -> None:
        """Prefill-completed request starts decoding where its KV lives."""
        self._emit_token(req)
        req.set_state(RequestState.DECODING)
        inst.pool_add(req)

    def choose_strict_dst(self) -> Instance:
        return max(self.strict, key=lambda i: (i.kv_free, -i.idx))

    def request_push(self, req: SimRequest, src: Instance) -> None:
        """Push a prefill-completed request to a strict instance, evicting
        offline work there if the policy allows; otherwise park it."""
        if req.state is RequestState.PREFILLING:
            req.set_state(RequestState.AWAITING_TRANSFER)
        dst = self.choose_strict_dst()
        needed = req.kv_tokens * self.per_token_kv
        if needed > dst.kv_free:
            victims = self.policy.eviction_victims_for(dst, needed - dst.kv_free, req)
            if victims:
                self.evict(dst, victims)
        if needed <= dst.kv_free:
            ok = self.migrate(req, src, dst, emit_token=True)
            if not ok:
                raise InvariantViolation("push transfer refused despite free capacity")
        elif req not in self.pending_pushes:
            self.pending_pushes.append(req)

    def _retry_pending(self) -> None:
        if self._retrying or not self.pending_pushes:
            return
        self._retrying = True
        try:
            for req in list(self.pending_pushes):
                src = self.instances[req.instance_idx]
                self.pending_pushes.remove(req)
                self.request_push(req, src)
        finally:
            self._retrying = False

    def send_pull_signal(self, strict_inst: Instance, relaxed_inst: Instance, pref) -> None:
        self._schedule(self.now, PULL_SIGNAL, strict_inst=strict_inst, relaxed_inst=relaxed_inst, pref=pref)
