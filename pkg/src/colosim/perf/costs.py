"""Operator cost formulas and the roofline latency rule.

All cost functions use exact integer arithmetic.  Memory traffic counts the
input/output tensors an operator must touch; fused attention keeps its score
matrix on chip, so only Q reads, KV reads, and output writes are charged.
"""

from __future__ import annotations

from .types import ModelSpec, OpCost


def gemm_cost(n: int, d_in: int, d_out: int, bytes_per_value: int) -> OpCost:
    """Cost of one GEMM with n input rows against a (d_in x d_out) weight."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if d_in < 1 or d_out < 1 or bytes_per_value < 1:
        raise ValueError("d_in, d_out, bytes_per_value must be >= 1")
    flops = 2 * n * d_in * d_out
    traffic = bytes_per_value * (n * d_in + d_in * d_out + n * d_out)
    return OpCost(flops, traffic)


def attention_cost(
    s_q: int,
    s_kv: int,
    hidden_dim: int,
    num_q_heads: int,
    num_kv_heads: int,
    bytes_per_value: int,
) -> OpCost:
    """Cost of one fused attention call for a single request."""
    if s_q < 1 or s_kv < 1:
        raise ValueError("s_q and s_kv must be >= 1")
    if hidden_dim < 1 or num_q_heads < 1 or num_kv_heads < 1 or bytes_per_value < 1:
        raise ValueError("dimensions must be >= 1")
    if num_q_heads % num_kv_heads != 0:
        raise ValueError("num_q_heads must be divisible by num_kv_heads")
    flops = 4 * hidden_dim * s_q * s_kv
    group = num_q_heads // num_kv_heads
    traffic = 2 * bytes_per_value * (s_q * hidden_dim + s_kv * hidden_dim * group)
    return OpCost(flops, traffic)


def op_latency(cost: OpCost, achievable_flops: float, achievable_bw: float) -> float:
    """Roofline rule: an operator runs at whichever resource limits it."""
    if achievable_flops <= 0 or achievable_bw <= 0:
        raise ValueError("rates must be positive")
    return max(cost.flops / achievable_flops, cost.bytes / achievable_bw)


def comm_latency(num_bytes: float, comm_bandwidth: float) -> float:
    """Transfer time over the interconnect; fixed delays live in the overheads."""
    if comm_bandwidth <= 0:
        raise ValueError("comm_bandwidth must be positive")
    if num_bytes < 0:
        raise ValueError("num_bytes must be >= 0")
    return num_bytes / comm_bandwidth


def kv_cache_bytes(model: ModelSpec, total_tokens: int) -> int:
    """Logical (unsharded) KV footprint of ``total_tokens`` cached tokens."""
    if total_tokens < 0:
        raise ValueError("total_tokens must be >= 0")
    return (
        2
        * model.bytes_per_value
        * model.num_layers
        * total_tokens
        * model.num_kv_heads
        * model.head_dim
    )
