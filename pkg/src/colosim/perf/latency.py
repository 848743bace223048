"""Iteration latency prediction and bottleneck analysis.

A decoder layer is modeled as fused-QKV GEMM, fused attention, output
projection, gate+up GEMM, and down GEMM; elementwise and norm ops are folded
into the static overheads.  Tensor parallelism shards every weight dimension
and adds two all-reduces per layer, costed at the interconnect bandwidth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .. import _kernels
from .costs import kv_cache_bytes
from .types import BatchDescriptor, BottleneckKind, HardwareProfile, ModelSpec, Phase


class BatchInfeasibleError(ValueError):
    """The batch's KV footprint cannot fit in the instance's KV pool."""


@dataclass(frozen=True)
class GemmShape:
    weight: int   # multiplicity (layer count for per-layer ops)
    d_in: int
    d_out: int


def gemm_shapes(model: ModelSpec) -> tuple[GemmShape, ...]:
    """Per-iteration GEMM operators, weights sharded across tp_degree."""
    tp = model.tp_degree
    layers = model.num_layers
    qkv_out = (model.num_q_heads + 2 * model.num_kv_heads) * model.head_dim
    return (
        GemmShape(layers, model.hidden_dim, qkv_out // tp),
        GemmShape(layers, model.hidden_dim // tp, model.hidden_dim),
        GemmShape(layers, model.hidden_dim, 2 * model.mlp_intermediate_dim // tp),
        GemmShape(layers, model.mlp_intermediate_dim // tp, model.hidden_dim),
        GemmShape(1, model.hidden_dim, model.vocab_dim // tp),
    )


@dataclass(frozen=True)
class _Coeffs:
    gemm_w: np.ndarray
    gemm_a: np.ndarray   # flops per unit N, per op
    gemm_b: np.ndarray   # bytes per unit N, per op
    gemm_c: np.ndarray   # constant bytes (weight traffic), per op
    attn_af: float
    attn_ab_group: float  # 2*d*Dh_shard, multiplied by the GQA group for KV reads
    group: int
    comm_per_n: float
    per_token_kv: int


@lru_cache(maxsize=64)
def _coeffs(model: ModelSpec, hw: HardwareProfile) -> _Coeffs:
    d = model.bytes_per_value
    shapes = gemm_shapes(model)
    w = np.array([s.weight for s in shapes], dtype=np.float64)
    a = np.array([2 * s.d_in * s.d_out for s in shapes], dtype=np.float64)
    b = np.array([d * (s.d_in + s.d_out) for s in shapes], dtype=np.float64)
    c = np.array([d * s.d_in * s.d_out for s in shapes], dtype=np.float64)
    dh_shard = model.hidden_dim // model.tp_degree
    group = model.num_q_heads // model.num_kv_heads
    comm_per_n = 0.0
    if model.tp_degree > 1:
        comm_per_n = 2 * model.num_layers * d * model.hidden_dim / hw.comm_bandwidth
    return _Coeffs(
        gemm_w=w,
        gemm_a=a,
        gemm_b=b,
        gemm_c=c,
        attn_af=float(4 * dh_shard),
        attn_ab_group=float(2 * d * dh_shard),
        group=group,
        comm_per_n=comm_per_n,
        per_token_kv=kv_cache_bytes(model, 1),
    )


def batch_kv_footprint(model: ModelSpec, batch: BatchDescriptor) -> int:
    """Total logical KV bytes the batch's contexts occupy."""
    per_token = kv_cache_bytes(model, 1)
    return per_token * sum(batch.context_lengths)


def predict_iteration_latency(
    model: ModelSpec,
    hw: HardwareProfile,
    batch: BatchDescriptor,
    *,
    check_capacity: bool = True,
) -> float:
    """Predicted wall time of one iteration: summed operator rooflines plus
    the phase's static overhead.

    With ``check_capacity`` (the default contract) a batch whose KV footprint
    exceeds the instance pool is rejected; schedulers probing hypothetical
    batches pass ``check_capacity=False``.
    """
    if check_capacity and batch_kv_footprint(model, batch) > hw.kv_capacity_bytes:
        raise BatchInfeasibleError(
            f"batch KV footprint {batch_kv_footprint(model, batch)} exceeds "
            f"capacity {hw.kv_capacity_bytes}"
        )
    return IterationPredictor(model, hw).predict(batch.phase, batch.context_lengths)


class IterationPredictor:
    """Latency predictor bound to one (model, hardware) pair.

    Thin stateless wrapper over the selected kernel backend; safe to share
    across threads and cheap to construct (coefficients are cached).
    """

    def __init__(self, model: ModelSpec, hw: HardwareProfile):
        self.model = model
        self.hw = hw
        co = _coeffs(model, hw)
        self._co = co
        self._inv_fg = 1.0 / hw.gemm_flops
        self._inv_mg = 1.0 / hw.gemm_bandwidth
        self._inv_fap = 1.0 / hw.prefill_attn_flops
        self._inv_fad = 1.0 / hw.decode_attn_flops
        self._inv_ma = 1.0 / hw.attn_bandwidth
        self.per_token_kv = co.per_token_kv

    def predict(self, phase: Phase, contexts: Sequence[int]) -> float:
        co = self._co
        if phase is Phase.PREFILL:
            return float(_kernels.iteration_latency(
                True,
                contexts,
                co.gemm_w,
                co.gemm_a,
                co.gemm_b,
                co.gemm_c,
                self._inv_fg,
                self._inv_mg,
                float(self.model.num_layers),
                co.attn_af,
                co.attn_ab_group * (1 + co.group),
                0.0,
                self._inv_fap,
                self._inv_ma,
                co.comm_per_n,
                self.hw.prefill_overhead_s,
            ))
        return float(_kernels.iteration_latency(
            False,
            contexts,
            co.gemm_w,
            co.gemm_a,
            co.gemm_b,
            co.gemm_c,
            self._inv_fg,
            self._inv_mg,
            float(self.model.num_layers),
            co.attn_af,
            co.attn_ab_group * co.group,
            co.attn_ab_group,
            self._inv_fad,
            self._inv_ma,
            co.comm_per_n,
            self.hw.decode_overhead_s,
        ))

    def decode(self, contexts: Sequence[int]) -> float:
        return self.predict(Phase.DECODE, contexts)

    def prefill(self, contexts: Sequence[int]) -> float:
        return self.predict(Phase.PREFILL, contexts)


def iteration_breakdown(
    model: ModelSpec, hw: HardwareProfile, batch: BatchDescriptor
) -> dict[str, float]:
    """Component view (gemm/attention/comm/overhead) of the iteration latency.

    Slow path used for diagnostics and tests; the kernel computes the same sum.
    """
    co = _coeffs(model, hw)
    n = batch.gemm_input_size
    gemm = 0.0
    for i in range(len(co.gemm_w)):
        tc = co.gemm_a[i] * n / hw.gemm_flops
        tm = (co.gemm_b[i] * n + co.gemm_c[i]) / hw.gemm_bandwidth
        gemm += co.gemm_w[i] * max(tc, tm)
    attn = 0.0
    if batch.phase is Phase.PREFILL:
        f_a = hw.prefill_attn_flops
        for s in batch.context_lengths:
            fl = co.attn_af * s * s
            by = co.attn_ab_group * (1 + co.group) * s
            attn += max(fl / f_a, by / hw.attn_bandwidth)
        overhead = hw.prefill_overhead_s
    else:
        f_a = hw.decode_attn_flops
        for s in batch.context_lengths:
            fl = co.attn_af * s
            by = co.attn_ab_group + co.attn_ab_group * co.group * s
            attn += max(fl / f_a, by / hw.attn_bandwidth)
        overhead = hw.decode_overhead_s
    attn *= model.num_layers
    comm = co.comm_per_n * n
    return {
        "gemm": float(gemm),
        "attention": float(attn),
        "comm": float(comm),
        "overhead": float(overhead),
        "total": float(gemm + attn + comm + overhead),
    }


def _gemm_aggregates(model: ModelSpec) -> tuple[int, int, int]:
    """(flops/N, bytes/N, constant bytes) summed over all GEMM operators."""
    d = model.bytes_per_value
    a = b = c = 0
    for s in gemm_shapes(model):
        a += s.weight * 2 * s.d_in * s.d_out
        b += s.weight * d * (s.d_in + s.d_out)
        c += s.weight * d * s.d_in * s.d_out
    return a, b, c


def _gemm_compute_dominates(model: ModelSpec, hw: HardwareProfile, n: int) -> bool:
    a, b, c = _gemm_aggregates(model)
    return a * n / hw.gemm_flops >= (b * n + c) / hw.gemm_bandwidth


def classify_bottleneck(
    model: ModelSpec,
    hw: HardwareProfile,
    batch: BatchDescriptor,
    *,
    capacity_threshold: float = 1.0,
) -> BottleneckKind:
    """Dominant resource limiting the iteration.

    Memory capacity overrides the compute/bandwidth split once the KV
    footprint reaches ``capacity_threshold`` of the pool.
    """
    if batch_kv_footprint(model, batch) >= capacity_threshold * hw.kv_capacity_bytes:
        return BottleneckKind.MEMORY_CAPACITY_BOUND
    if _gemm_compute_dominates(model, hw, batch.gemm_input_size):
        return BottleneckKind.COMPUTE_BOUND
    return BottleneckKind.MEMORY_BANDWIDTH_BOUND


def compute_saturated_batch_size(
    model: ModelSpec, hw: HardwareProfile, *, max_batch: int = 1 << 20
) -> Optional[int]:
    """Smallest decode batch size at which the aggregate GEMM work becomes
    compute-bound (the roofline ridge for this model's GEMM mix).

    Independent of context lengths: decode GEMM input size is the batch size.
    Returns None when the ridge exceeds ``max_batch`` (never saturates).
    """
    a, b, c = _gemm_aggregates(model)
    slope = a / hw.gemm_flops - b / hw.gemm_bandwidth
    if slope <= 0:
        return None
    n = max(1, math.ceil((c / hw.gemm_bandwidth) / slope))
    # Float-safety: nudge to the exact flip point of the >= predicate.
    while n > 1 and _gemm_compute_dominates(model, hw, n - 1):
        n -= 1
    while not _gemm_compute_dominates(model, hw, n):
        n += 1
        if n > max_batch:
            return None
    return n if n <= max_batch else None
