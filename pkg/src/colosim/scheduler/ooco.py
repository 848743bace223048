"""The bottleneck-aware co-location policy ("ooco").

Four decision points: immediate preemption of offline prefill on online
arrival, admission gating for new offline prefills, pull-based migration of
offline decodes toward strict instances with spare latency budget, and
per-step mixed decode batch selection under the TPOT bound.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

from ..cluster.instance import DecodeRun, Instance
from ..cluster.request import RequestState, SimRequest
from ..perf.latency import classify_bottleneck, compute_saturated_batch_size
from ..perf.types import BatchDescriptor, BottleneckKind, Phase
from .algorithms import (
    InsufficientPoolError,
    LengthPreference,
    gating_admits,
    migration_decision,
    mix_decoding_selection,
    select_eviction_victims,
)
from .base import Policy


class OocoPolicy(Policy):
    name = "ooco"

    def _post_bind(self) -> None:
        self.bs_sat = compute_saturated_batch_size(self.config.model, self.config.strict_hw)
        self.risk_events: deque[float] = deque()  # preemption/eviction timestamps
        self._pending_pull: dict[int, tuple[Instance, LengthPreference]] = {}
        self._inflight_pull: dict[int, list[SimRequest]] = {i.idx: [] for i in self.engine.strict}

    # -- arrivals ---------------------------------------------------------

    def on_arrival(self, req: SimRequest) -> None:
        if req.is_online:
            self.route_online_arrival(req, preempt=True)
        else:
            self.route_offline_arrival(req)

    # -- work selection ----------------------------------------------------

    def next_work(self, inst: Instance) -> tuple[str, object]:
        if inst.strict:
            return self._next_strict(inst)
        return self._next_relaxed(inst)

    def _next_strict(self, inst: Instance) -> tuple[str, object]:
        r_on = sorted(inst.online_pool, key=lambda r: r.seq)
        r_off = sorted(inst.offline_pool, key=lambda r: r.seq)
        if not r_on and not r_off:
            self._bootstrap_pull(inst)
            return ("idle", None)
        batch = mix_decoding_selection(
            r_on,
            r_off,
            self.slo.tpot_slo,
            lambda reqs: inst.predictor.decode(self.decode_contexts(reqs)),
            self.pcfg.k_random,
            self.rng,
            length_of=lambda r: r.context_len,
            mode=self.pcfg.overload_mode,
        )
        return ("decode", batch) if batch else ("idle", None)

    def _next_relaxed(self, inst: Instance) -> tuple[str, object]:
        if inst.online_prefill_q:
            return ("prefill", inst.online_prefill_q[0])
        if inst.offline_prefill_q:
            head = inst.offline_prefill_q[0]
            if head.layers_done > 0:
                return ("prefill", head)  # halted mid-pass: finish it first
            if self._admit_offline(inst, head):
                return ("prefill", head)
        pool = sorted(inst.offline_pool, key=lambda r: r.seq)
        if pool:
            n_fit = inst.kv_free // self.engine.per_token_kv
            batch = pool[: max(0, n_fit)]
            if batch:
                return ("decode", batch)
        return ("idle", None)

    # -- offline gating ------------------------------------------------------

    def _p_evict(self, candidate: SimRequest, pool_size: int, inst: Instance) -> float:
        window = self.pcfg.gating_window_s
        now = self.engine.now
        while self.risk_events and self.risk_events[0] < now - window:
            self.risk_events.popleft()
        if not self.risk_events:
            return 0.0
        rate = len(self.risk_events) / window
        contexts = self.decode_contexts(sorted(inst.offline_pool, key=lambda r: r.seq))
        per_token = inst.predictor.decode(contexts + [candidate.prompt_len]) / (pool_size + 1)
        residence = candidate.output_len * per_token
        return min(1.0, rate * residence)

    def _admit_offline(self, inst: Instance, cand: SimRequest) -> bool:
        ptk = self.engine.per_token_kv
        committed_growth = sum(max(0, r.remaining_tokens) for r in inst.offline_pool) * ptk
        need = cand.prefill_length * ptk
        if self.pcfg.gating_reserve_output:
            need += cand.output_len * ptk + committed_growth
        if need > inst.kv_free:
            return False
        pool = sorted(inst.offline_pool, key=lambda r: r.seq)
        return gating_admits(
            lambda ctxs: inst.predictor.decode(ctxs),
            self.decode_contexts(pool),
            sum(max(0, r.remaining_tokens) for r in pool),
            cand.prompt_len,
            inst.predictor.prefill([cand.prefill_length]),
            self._p_evict(cand, len(pool), inst),
        )

    # -- routing after prefill ---------------------------------------------

    def on_prefill_done(self, inst: Instance, req: SimRequest) -> None:
        if req.is_online:
            self.engine.request_push(req, inst)
        else:
            # Offline decodes locally; strict instances pull it when useful.
            self.engine.enter_local_pool(inst, req)
            for strict_inst in self.engine.strict:
                self.engine.kick(strict_inst)  # idle ones may bootstrap a pull

    # -- migration review -----------------------------------------------------

    def after_decode_step(self, inst: Instance, run: DecodeRun) -> None:
        if inst.relaxed:
            pending = self._pending_pull.pop(inst.idx, None)
            if pending is not None:
                strict_inst, pref = pending
                self._serve_pull(inst, strict_inst, pref)
            return
        self._review_migration(
            inst, self.decode_contexts(run.batch), run.predicted_s, run.all_resident_included
        )

    def _bootstrap_pull(self, inst: Instance) -> None:
        """An empty strict instance trivially has latency headroom: review
        the (empty) batch so offline work can be pulled without waiting for
        online traffic to produce a first decode step."""
        inflight = self._inflight_pull[inst.idx]
        inflight[:] = [r for r in inflight if r.state is RequestState.AWAITING_TRANSFER]
        if not inflight:
            self._review_migration(inst, [], 0.0, True)

    def _review_migration(
        self, inst: Instance, contexts: list[int], step_latency: float, all_included: bool
    ) -> None:
        pref = migration_decision(
            contexts,
            step_latency,
            all_included,
            self.slo.tpot_slo,
            self.slo.slo_margin,
            lambda ctxs: inst.predictor.decode(ctxs),
            self.bs_sat,
            lambda length: (inst.kv_used + length * self.engine.per_token_kv)
            / inst.hw.kv_capacity_bytes,
            self.pcfg.probe_max_len,
        )
        if pref.none:
            return
        targets = [r for r in self.engine.relaxed if r.offline_pool]
        if not targets:
            return
        target = max(targets, key=lambda r: (len(r.offline_pool), -r.idx))
        self.engine.send_pull_signal(inst, target, pref)

    def on_pull_signal(self, strict_inst: Instance, relaxed_inst: Instance, pref: LengthPreference) -> None:
        if isinstance(relaxed_inst.activity, DecodeRun):
            # Members of the running step cannot move; serve at its boundary.
            self._pending_pull[relaxed_inst.idx] = (strict_inst, pref)
            return
        self._serve_pull(relaxed_inst, strict_inst, pref)

    def _serve_pull(self, relaxed_inst: Instance, strict_inst: Instance, pref: LengthPreference) -> None:
        if pref.none:
            return
        candidates = [
            r for r in relaxed_inst.offline_pool if r.state is RequestState.DECODING
        ]
        if pref.mode == "max_len_within":
            candidates = [r for r in candidates if r.context_len <= pref.limit]
            candidates.sort(key=lambda r: (-r.context_len, r.seq))
        else:
            candidates.sort(key=lambda r: (r.context_len, r.seq))
        inflight = self._inflight_pull[strict_inst.idx]
        inflight[:] = [r for r in inflight if r.state is RequestState.AWAITING_TRANSFER]
        contexts = self.decode_contexts(
            sorted(strict_inst.online_pool + strict_inst.offline_pool, key=lambda r: r.seq)
        ) + self.decode_contexts(inflight)
        bound = self.slo.tpot_slo * (1.0 - self.slo.slo_margin)
        for cand in candidates:
            if strict_inst.predictor.decode(contexts + [cand.context_len]) > bound:
                break
            if not self.engine.migrate(cand, relaxed_inst, strict_inst):
                break  # destination capacity refused; caller may evict later
            inflight.append(cand)
            contexts.append(cand.context_len)

    # -- eviction -----------------------------------------------------------

    def _current_bottleneck(self, inst: Instance) -> BottleneckKind:
        contexts = self.decode_contexts(
            sorted(inst.online_pool + inst.offline_pool, key=lambda r: r.seq)
        )
        if not contexts:
            return BottleneckKind.MEMORY_BANDWIDTH_BOUND
        return classify_bottleneck(
            inst.model,
            inst.hw,
            BatchDescriptor(Phase.DECODE, contexts),
            capacity_threshold=self.pcfg.capacity_threshold,
        )

    def _select_victims(self, inst: Instance, pool: list[SimRequest], needed_bytes: int) -> list[SimRequest]:
        return select_eviction_victims(
            pool,
            needed_bytes,
            self._current_bottleneck(inst),
            bytes_of=lambda r: r.holdings.get(inst.idx, 0),
            length_of=lambda r: r.context_len,
            tiebreak=lambda r: r.seq,
        )

    def eviction_victims_for(self, inst: Instance, needed_bytes: int, req: SimRequest) -> Optional[list[SimRequest]]:
        if not req.is_online:
            return None  # offline work never evicts anyone
        running = inst.running_batch() or []
        pool = [r for r in inst.offline_pool if r not in running]
        try:
            return self._select_victims(inst, pool, needed_bytes)
        except InsufficientPoolError:
            return None  # park the push; retried at the next step boundary

    def make_room(self, inst: Instance, needed_bytes: int, req: SimRequest) -> bool:
        if not req.is_online:
            return False
        return self.reclaim_kv(inst, needed_bytes, lambda pool, need: self._select_victims(inst, pool, need))

    def reselect_on_capacity(self, inst: Instance, batch: list[SimRequest]) -> list[SimRequest]:
        online = [r for r in batch if r.is_online]
        offline = [r for r in batch if not r.is_online]
        ptk = self.engine.per_token_kv
        while offline and len(online + offline) * ptk > inst.kv_free:
            offline.pop()
        if len(online + offline) * ptk <= inst.kv_free:
            return online + offline
        # Online alone does not fit; offline was fully shed above, so every
        # pool member is a legal victim.
        self.reclaim_kv(
            inst,
            len(online) * ptk - inst.kv_free,
            lambda pool, need: self._select_victims(inst, pool, need),
        )
        while online and len(online) * ptk > inst.kv_free:
            online.pop()  # hard exhaustion: excluded members just skip the step
        return online

    # -- risk window ---------------------------------------------------------

    def on_preemption(self, t: float) -> None:
        self.risk_events.append(t)

    def on_eviction(self, t: float) -> None:
        self.risk_events.append(t)
