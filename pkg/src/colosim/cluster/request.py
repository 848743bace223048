"""Request lifecycle state for the event engine."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..workload import ONLINE, TraceRecord


class RequestState(Enum):
    QUEUED = "queued"
    PREFILLING = "prefilling"
    AWAITING_TRANSFER = "awaiting_transfer"
    DECODING = "decoding"
    EVICTED = "evicted"
    COMPLETE = "complete"


# Legal lifecycle transitions; eviction re-enters the prefill queue.
_TRANSITIONS = {
    RequestState.QUEUED: {RequestState.PREFILLING},
    RequestState.PREFILLING: {RequestState.QUEUED, RequestState.AWAITING_TRANSFER, RequestState.DECODING, RequestState.COMPLETE},
    RequestState.AWAITING_TRANSFER: {RequestState.DECODING},
    RequestState.DECODING: {RequestState.AWAITING_TRANSFER, RequestState.EVICTED, RequestState.COMPLETE},
    RequestState.EVICTED: {RequestState.QUEUED},
    RequestState.COMPLETE: set(),
}


@dataclass
class SimRequest:
    seq: int                      # global arrival index; canonical ordering key
    id: str
    arrival_ts: float
    prompt_len: int
    output_len: int
    is_online: bool
    state: RequestState = RequestState.QUEUED
    instance_idx: Optional[int] = None
    layers_done: int = 0
    prefill_length: int = 0       # tokens the next prefill pass processes
    tokens_emitted: int = 0
    kv_tokens: int = 0
    eviction_count: int = 0
    migration_count: int = 0
    first_token_ts: Optional[float] = None
    completion_ts: Optional[float] = None
    emit_ts: list[float] = field(default_factory=list)
    holdings: dict[int, int] = field(default_factory=dict)  # instance idx -> reserved KV bytes

    @classmethod
    def from_trace(cls, seq: int, rec: TraceRecord) -> "SimRequest":
        return cls(
            seq=seq,
            id=rec.id,
            arrival_ts=rec.arrival_ts,
            prompt_len=rec.prompt_len,
            output_len=rec.output_len,
            is_online=rec.request_class == ONLINE,
            prefill_length=rec.prompt_len,
        )

    @property
    def context_len(self) -> int:
        """KV length its next decode step attends over (prompt + emitted)."""
        return self.prompt_len + self.tokens_emitted

    @property
    def remaining_tokens(self) -> int:
        return self.output_len - self.tokens_emitted

    @property
    def complete(self) -> bool:
        return self.state is RequestState.COMPLETE

    def set_state(self, new: RequestState) -> None:
        if new not in _TRANSITIONS[self.state]:
            raise RuntimeError(f"request {self.id}: illegal transition {self.state} -> {new}")
        self.state = new
