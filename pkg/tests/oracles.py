"""Independent reference implementations used to check the main code paths.

Everything here is written as straight-line arithmetic over the documented
operator decomposition, deliberately structured differently from the package
(explicit per-layer loops, no coefficient folding), so agreement is a real
cross-check rather than a tautology.
"""

from __future__ import annotations

from itertools import combinations

from colosim.perf.types import HardwareProfile, ModelSpec, Phase


def oracle_gemm(n: int, d_in: int, d_out: int, d: int) -> tuple[int, int]:
    return 2 * n * d_in * d_out, d * (n * d_in + d_in * d_out + n * d_out)


def oracle_attention(sq: int, skv: int, dh: int, hq: int, hkv: int, d: int) -> tuple[int, int]:
    return 4 * dh * sq * skv, 2 * d * (sq * dh + skv * dh * (hq // hkv))


def oracle_kv_bytes(model: ModelSpec, tokens: int) -> int:
    return 2 * model.bytes_per_value * model.num_layers * tokens * model.num_kv_heads * model.head_dim


def oracle_iteration_latency(
    model: ModelSpec, hw: HardwareProfile, phase: Phase, contexts: list[int]
) -> float:
    """Sum of per-operator roofline times plus the phase overhead, enumerating
    every layer explicitly."""
    d = model.bytes_per_value
    tp = model.tp_degree
    prefill = phase is Phase.PREFILL
    n = sum(contexts) if prefill else len(contexts)
    f_attn = hw.prefill_attn_flops if prefill else hw.decode_attn_flops
    dh_shard = model.hidden_dim // tp
    hq_shard = model.num_q_heads // tp
    hkv_shard = max(1, model.num_kv_heads // tp)

    def roofline(flops: int, traffic: int, f: float, m: float) -> float:
        return max(flops / f, traffic / m)

    total = 0.0
    qkv_out = (model.num_q_heads + 2 * model.num_kv_heads) * model.head_dim // tp
    layer_gemms = [
        (model.hidden_dim, qkv_out),
        (model.hidden_dim // tp, model.hidden_dim),
        (model.hidden_dim, 2 * model.mlp_intermediate_dim // tp),
        (model.mlp_intermediate_dim // tp, model.hidden_dim),
    ]
    for _ in range(model.num_layers):
        for d_in, d_out in layer_gemms:
            fl, by = oracle_gemm(n, d_in, d_out, d)
            total += roofline(fl, by, hw.gemm_flops, hw.gemm_bandwidth)
        for ctx in contexts:
            sq = ctx if prefill else 1
            fl, by = oracle_attention(sq, ctx, dh_shard, hq_shard, hkv_shard, d)
            total += roofline(fl, by, f_attn, hw.attn_bandwidth)
        if tp > 1:
            total += 2 * (d * n * model.hidden_dim) / hw.comm_bandwidth
    fl, by = oracle_gemm(n, model.hidden_dim, model.vocab_dim // tp, d)
    total += roofline(fl, by, hw.gemm_flops, hw.gemm_bandwidth)
    total += hw.prefill_overhead_s if prefill else hw.decode_overhead_s
    return total


def oracle_bs_sat(model: ModelSpec, hw: HardwareProfile, max_batch: int = 4096) -> int | None:
    """Linear scan for the smallest decode batch where aggregate GEMM compute
    time reaches aggregate GEMM memory time."""
    d = model.bytes_per_value
    tp = model.tp_degree
    qkv_out = (model.num_q_heads + 2 * model.num_kv_heads) * model.head_dim // tp
    gemms = [
        (model.hidden_dim, qkv_out, model.num_layers),
        (model.hidden_dim // tp, model.hidden_dim, model.num_layers),
        (model.hidden_dim, 2 * model.mlp_intermediate_dim // tp, model.num_layers),
        (model.mlp_intermediate_dim // tp, model.hidden_dim, model.num_layers),
        (model.hidden_dim, model.vocab_dim // tp, 1),
    ]
    for n in range(1, max_batch + 1):
        flops = sum(w * 2 * n * di * do for di, do, w in gemms)
        traffic = sum(w * d * (n * di + di * do + n * do) for di, do, w in gemms)
        if flops / hw.gemm_flops >= traffic / hw.gemm_bandwidth:
            return n
    return None


def brute_force_min_victim_count(sizes: list[int], needed: int) -> int | None:
    """Smallest subset cardinality whose sizes sum to at least ``needed``."""
    for k in range(len(sizes) + 1):
        for combo in combinations(sizes, k):
            if sum(combo) >= needed:
                return k
    return None


def brute_force_largest_prefix(lengths_sorted, base, latency_fn, bound) -> int:
    """Largest m such that latency(base + first m sorted candidates) <= bound."""
    best = 0
    for m in range(len(lengths_sorted) + 1):
        batch = base + lengths_sorted[:m]
        lat = latency_fn(batch) if batch else 0.0
        if lat <= bound:
            best = m
    return best
