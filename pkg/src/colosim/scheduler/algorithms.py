"""Pure scheduling decision functions.

These are the policy kernels: batch mix selection, the migration length
preference, eviction victim choice, and offline admission gating.  All are
deterministic given their inputs (the mix selection consumes a caller-owned
RNG) and independent of engine state, so they are directly testable against
brute-force oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

from ..perf.types import BottleneckKind

R = TypeVar("R")


@dataclass(frozen=True)
class LengthPreference:
    """Length preference for pulled offline requests."""

    mode: str  # "none" | "shortest" | "max_len_within"
    limit: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in ("none", "shortest", "max_len_within"):
            raise ValueError(f"unknown preference mode {self.mode!r}")
        if self.mode == "max_len_within" and (self.limit is None or self.limit < 1):
            raise ValueError("max_len_within requires limit >= 1")

    @property
    def none(self) -> bool:
        return self.mode == "none"


NO_MIGRATION = LengthPreference("none")
SHORTEST = LengthPreference("shortest")


def max_len_within(limit: int) -> LengthPreference:
    return LengthPreference("max_len_within", limit)


def mix_decoding_selection(
    r_on: Sequence[R],
    r_off: Sequence[R],
    slo_bound: float,
    latency_fn: Callable[[list[R]], float],
    k_random: int,
    rng: np.random.Generator,
    *,
    length_of: Callable[[R], int],
    mode: str = "best_effort",
) -> list[R]:
    """Select the decode batch: every online request, then as many offline
    candidates as the latency bound admits.

    Up to ``k_random`` candidates are tested individually in random order
    (without replacement) so long-pending requests cannot starve; the untested
    remainder is sorted by ascending length and the largest latency-feasible
    prefix is merged via binary search.  When the online set alone exceeds the
    bound, ``mode`` picks between running it regardless (best_effort) and
    shedding the newest online requests (sacrifice).
    """

    def lat(batch: list[R]) -> float:
        return latency_fn(batch) if batch else 0.0

    batch = list(r_on)
    if batch and lat(batch) > slo_bound:
        if mode == "sacrifice":
            while len(batch) > 1 and lat(batch) > slo_bound:
                batch.pop()  # canonical order is oldest-first; drop newest
        return batch

    remaining = list(r_off)
    tested = 0
    while remaining and tested < k_random:
        cand = remaining.pop(int(rng.integers(len(remaining))))
        tested += 1
        if lat(batch + [cand]) <= slo_bound:
            batch.append(cand)
    if remaining and lat(batch) < slo_bound:
        remaining.sort(key=length_of)
        lo, hi = 0, len(remaining)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if lat(batch + remaining[:mid]) <= slo_bound:
                lo = mid
            else:
                hi = mid - 1
        batch.extend(remaining[:lo])
    return batch


def _max_feasible_len(
    feasible: Callable[[int], bool], probe_max_len: int
) -> Optional[int]:
    """Largest length in [1, probe_max_len] passing a monotone predicate."""
    if not feasible(1):
        return None
    lo, hi = 1, probe_max_len
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if feasible(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def migration_decision(
    batch_contexts: Sequence[int],
    batch_latency: float,
    all_resident_included: bool,
    slo_bound: float,
    slo_margin: float,
    latency_fn: Callable[[list[int]], float],
    bs_sat: Optional[int],
    mem_utilization: Callable[[int], float],
    probe_max_len: int,
) -> LengthPreference:
    """Decide whether a strict instance should pull offline work, and which
    request length it prefers.

    Probes add one synthetic request of length l to the reviewed batch.  Once
    the batch is compute-saturated the goal shifts to filling memory capacity
    (longest l within both the latency bound and the pool); if one addition
    could reach saturation, longest l within the latency bound; otherwise
    shortest requests to grow the batch.  No preference is returned unless the
    reviewed step left margin under the bound and included every resident
    request.
    """
    if not all_resident_included or not batch_latency < slo_bound * (1.0 - slo_margin):
        return NO_MIGRATION
    contexts = list(batch_contexts)

    def latency_ok(length: int) -> bool:
        return latency_fn(contexts + [length]) <= slo_bound

    saturated = bs_sat is not None and len(contexts) >= bs_sat
    if saturated:
        limit = _max_feasible_len(
            lambda l: latency_ok(l) and mem_utilization(l) <= 1.0, probe_max_len
        )
        return max_len_within(limit) if limit is not None else NO_MIGRATION
    if bs_sat is not None and len(contexts) + 1 >= bs_sat and latency_ok(1):
        limit = _max_feasible_len(latency_ok, probe_max_len)
        return max_len_within(limit) if limit is not None else NO_MIGRATION
    return SHORTEST


class InsufficientPoolError(RuntimeError):
    """The eviction pool cannot cover the requested bytes."""


def select_eviction_victims(
    pool: Sequence[R],
    needed_bytes: int,
    bottleneck: BottleneckKind,
    *,
    bytes_of: Callable[[R], int],
    length_of: Callable[[R], int],
    tiebreak: Callable[[R], int],
) -> list[R]:
    """Greedy victim choice driven by the instance's bottleneck.

    Compute-bound: evict longest-context requests first (fewest victims, the
    batch size survives).  Otherwise: shortest first (cheapest recompute per
    freed byte).  Ties break deterministically via ``tiebreak``.
    """
    if needed_bytes <= 0:
        return []
    if sum(bytes_of(r) for r in pool) < needed_bytes:
        raise InsufficientPoolError(
            f"pool frees less than the {needed_bytes} bytes required"
        )
    if bottleneck is BottleneckKind.COMPUTE_BOUND:
        ordered = sorted(pool, key=lambda r: (-length_of(r), tiebreak(r)))
    else:
        ordered = sorted(pool, key=lambda r: (length_of(r), tiebreak(r)))
    victims: list[R] = []
    freed = 0
    for r in ordered:
        if freed >= needed_bytes:
            break
        victims.append(r)
        freed += bytes_of(r)
    return victims


def gating_admits(
    step_latency: Callable[[list[int]], float],
    pool_contexts: Sequence[int],
    pool_remaining_tokens: int,
    candidate_context: int,
    candidate_prefill_s: float,
    p_evict: float,
) -> bool:
    """Admit a new offline prefill only when the expected per-token decode
    saving over the pool's remaining tokens beats the expected recompute loss.

    An empty pool always admits: decoding cannot start without a first
    request.  This is the one place the gating benefit model lives; replace it
    here if a better estimator shows up.
    """
    b = len(pool_contexts)
    if b == 0:
        return True
    l_now = step_latency(list(pool_contexts))
    l_next = step_latency(list(pool_contexts) + [candidate_context])
    benefit = (l_now / b - l_next / (b + 1)) * pool_remaining_tokens
    return benefit > p_evict * candidate_prefill_s
