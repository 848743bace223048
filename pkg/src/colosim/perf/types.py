"""Core value types for the roofline performance model."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence


class Phase(Enum):
    PREFILL = "prefill"
    DECODE = "decode"


class BottleneckKind(Enum):
    COMPUTE_BOUND = "compute"
    MEMORY_BANDWIDTH_BOUND = "memory_bandwidth"
    MEMORY_CAPACITY_BOUND = "memory_capacity"


@dataclass(frozen=True)
class OpCost:
    """Resource demand of one operator: FLOPs executed and bytes moved."""

    flops: int
    bytes: int

    def __post_init__(self) -> None:
        if self.flops < 0 or self.bytes < 0:
            raise ValueError("OpCost fields must be non-negative")

    def __add__(self, other: "OpCost") -> "OpCost":
        return OpCost(self.flops + other.flops, self.bytes + other.bytes)


@dataclass(frozen=True)
class HardwareProfile:
    """Achievable-rate and overhead parameters of one accelerator instance.

    Rates are achievable (profiled) values, not theoretical peaks.  The two
    static overheads absorb CPU-side logic, kernel launches, and fixed network
    delays; they do not scale with batch size or sequence length.
    """

    gemm_flops: float            # FLOPs/s sustained by GEMM kernels
    prefill_attn_flops: float    # FLOPs/s sustained by prefill attention
    decode_attn_flops: float     # FLOPs/s sustained by decode attention
    gemm_bandwidth: float        # bytes/s sustained by GEMM kernels
    attn_bandwidth: float        # bytes/s sustained by attention kernels
    prefill_overhead_s: float    # static per-iteration overhead, prefill
    decode_overhead_s: float     # static per-iteration overhead, decode
    comm_bandwidth: float        # bytes/s of the interconnect
    kv_capacity_bytes: int       # KV-cache pool size of the instance

    def __post_init__(self) -> None:
        for name in (
            "gemm_flops",
            "prefill_attn_flops",
            "decode_attn_flops",
            "gemm_bandwidth",
            "attn_bandwidth",
            "comm_bandwidth",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"HardwareProfile.{name} must be positive")
        if self.prefill_overhead_s < 0 or self.decode_overhead_s < 0:
            raise ValueError("overheads must be non-negative")
        if self.kv_capacity_bytes <= 0:
            raise ValueError("kv_capacity_bytes must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Decoder-only transformer dimensions needed to enumerate operators."""

    num_layers: int
    hidden_dim: int
    num_q_heads: int
    num_kv_heads: int
    head_dim: int
    mlp_intermediate_dim: int
    vocab_dim: int
    bytes_per_value: int = 2
    tp_degree: int = 1

    def __post_init__(self) -> None:
        for name in (
            "num_layers",
            "hidden_dim",
            "num_q_heads",
            "num_kv_heads",
            "head_dim",
            "mlp_intermediate_dim",
            "vocab_dim",
            "bytes_per_value",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"ModelSpec.{name} must be >= 1")
        if self.tp_degree < 1:
            raise ValueError("tp_degree must be >= 1")
        if self.num_q_heads % self.num_kv_heads != 0:
            raise ValueError("num_q_heads must be divisible by num_kv_heads")
        if self.hidden_dim != self.num_q_heads * self.head_dim:
            raise ValueError("hidden_dim must equal num_q_heads * head_dim")
        if self.tp_degree > 1:
            for name in ("num_q_heads", "num_kv_heads", "mlp_intermediate_dim", "vocab_dim"):
                if getattr(self, name) % self.tp_degree != 0:
                    raise ValueError(f"ModelSpec.{name} must be divisible by tp_degree")


@dataclass(frozen=True)
class BatchDescriptor:
    """One iteration's worth of work.

    For prefill, ``context_lengths`` holds the prompt tokens each request
    processes (query length equals KV length).  For decode, each request
    contributes a single query token attending over its current context.
    """

    phase: Phase
    context_lengths: tuple[int, ...]

    def __init__(self, phase: Phase, context_lengths: Sequence[int]):
        lengths = tuple(int(c) for c in context_lengths)
        if not lengths:
            raise ValueError("batch must contain at least one request")
        if any(c < 1 for c in lengths):
            raise ValueError("all context lengths must be >= 1")
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "context_lengths", lengths)

    @property
    def batch_size(self) -> int:
        return len(self.context_lengths)

    @property
    def gemm_input_size(self) -> int:
        """GEMM input rows: total tokens for prefill, batch size for decode."""
        if self.phase is Phase.PREFILL:
            return sum(self.context_lengths)
        return len(self.context_lengths)
