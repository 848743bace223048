"""Roofline-based performance model for decoder-only transformer serving."""

from .costs import attention_cost, comm_latency, gemm_cost, kv_cache_bytes, op_latency
from .latency import (
    BatchInfeasibleError,
    IterationPredictor,
    batch_kv_footprint,
    classify_bottleneck,
    compute_saturated_batch_size,
    gemm_shapes,
    iteration_breakdown,
    predict_iteration_latency,
)
from .types import BatchDescriptor, BottleneckKind, HardwareProfile, ModelSpec, OpCost, Phase

__all__ = [
    "attention_cost",
    "batch_kv_footprint",
    "BatchDescriptor",
    "BatchInfeasibleError",
    "BottleneckKind",
    "classify_bottleneck",
    "comm_latency",
    "compute_saturated_batch_size",
    "gemm_cost",
    "gemm_shapes",
    "HardwareProfile",
    "IterationPredictor",
    "iteration_breakdown",
    "kv_cache_bytes",
    "ModelSpec",
    "OpCost",
    "op_latency",
    "Phase",
    "predict_iteration_latency",
]
