"""Policy interface and shared routing helpers."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..cluster.config import SimConfig
from ..cluster.instance import Instance, PrefillRun
from ..cluster.request import SimRequest


class Policy:
    """Deterministic decision-maker invoked by the single-threaded engine.

    The engine owns mechanics; a policy only chooses what runs next, how
    batches are formed, and who gets evicted.  All randomness flows through
    the policy's own seeded generator.
    """

    name = "abstract"

    def __init__(self, config: SimConfig):
        self.config = config
        self.slo = config.slo
        self.pcfg = config.policy
        self.rng = np.random.default_rng([config.seed, 0x5EED])
        self.engine = None

    def bind(self, engine) -> None:
        self.engine = engine
        self._post_bind()

    def _post_bind(self) -> None:
        pass

    # -- decision hooks -------------------------------------------------

    def on_arrival(self, req: SimRequest) -> None:
        raise NotImplementedError

    def next_work(self, inst: Instance) -> tuple[str, object]:
        raise NotImplementedError

    def on_prefill_done(self, inst: Instance, req: SimRequest) -> None:
        raise NotImplementedError

    def after_decode_step(self, inst: Instance, run) -> None:
        pass

    def on_pull_signal(self, strict_inst: Instance, relaxed_inst: Instance, pref) -> None:
        pass

    def reselect_on_capacity(self, inst: Instance, batch: list[SimRequest]) -> list[SimRequest]:
        """Called when the chosen batch's one-token KV growth does not fit.
        Default: shed offline members from the tail, then whatever fits."""
        online = [r for r in batch if r.is_online]
        offline = [r for r in batch if not r.is_online]
        ptk = self.engine.per_token_kv
        while online + offline and len(online + offline) * ptk > inst.kv_free:
            if offline:
                offline.pop()
            else:
                online.pop()
        return online + offline

    def eviction_victims_for(self, inst: Instance, needed_bytes: int, req: SimRequest) -> Optional[list[SimRequest]]:
        """Victims to free ``needed_bytes`` on ``inst`` for an incoming
        request, or None to defer (request parks until capacity frees)."""
        return None

    def make_room(self, inst: Instance, needed_bytes: int, req: SimRequest) -> bool:
        """Free KV on a relaxed instance so a prefill can start."""
        return False

    def reclaim_kv(self, inst: Instance, needed_bytes: int, select) -> bool:
        """Free at least ``needed_bytes`` on ``inst`` by evicting offline
        decodes (ordered by ``select``) and then dropping halted prefills'
        partial-layer reservations.  Refuses without side effects when the
        reclaimable total cannot cover the need."""
        running = inst.running_batch() or []
        pool = [r for r in inst.offline_pool if r not in running]
        pool_bytes = sum(r.holdings.get(inst.idx, 0) for r in pool)
        halted = [r for r in inst.offline_prefill_q if r.holdings.get(inst.idx, 0)]
        halted_bytes = sum(r.holdings.get(inst.idx, 0) for r in halted)
        if pool_bytes + halted_bytes < needed_bytes:
            return False
        freed = 0
        if pool and needed_bytes > 0:
            victims = select(pool, min(needed_bytes, pool_bytes))
            freed = self.engine.evict(inst, victims)
        for req in halted:
            if freed >= needed_bytes:
                break
            freed += self.engine.reclaim_halted_kv(inst, req)
        return freed >= needed_bytes

    # -- notifications ---------------------------------------------------

    def on_preemption(self, t: float) -> None:
        pass

    def on_eviction(self, t: float) -> None:
        pass

    # -- shared helpers ---------------------------------------------------

    def shortest_online_queue(self) -> Instance:
        return min(self.engine.relaxed, key=lambda i: (i.prefill_queue_len(True), i.idx))

    def shortest_offline_queue(self) -> Instance:
        return min(self.engine.relaxed, key=lambda i: (i.prefill_queue_len(False), i.idx))

    def route_online_arrival(self, req: SimRequest, *, preempt: bool) -> None:
        """Queue at the least-loaded relaxed instance and, when it is
        mid-offline-prefill, interrupt that prefill."""
        inst = self.shortest_online_queue()
        run = inst.activity
        if preempt and isinstance(run, PrefillRun) and not run.request.is_online:
            self.engine.preempt_prefill(inst)
        inst.online_prefill_q.append(req)
        self.engine.kick(inst)

    def route_offline_arrival(self, req: SimRequest) -> None:
        inst = self.shortest_offline_queue()
        inst.offline_prefill_q.append(req)
        self.engine.kick(inst)

    def decode_contexts(self, reqs: list[SimRequest]) -> list[int]:
        return [r.context_len for r in reqs]
