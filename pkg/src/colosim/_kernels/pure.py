"""Pure-Python iteration-latency kernel.

This is the reference implementation of the hot loop; the Cython twin in
``_fast.pyx`` mirrors it operation for operation so both backends produce
the same floating-point result (up to compiler contraction).
"""

from __future__ import annotations

BACKEND = "pure"


def iteration_latency(
    prefill: bool,
    contexts,
    gemm_w,
    gemm_a,
    gemm_b,
    gemm_c,
    inv_fg: float,
    inv_mg: float,
    attn_weight: float,
    attn_af: float,
    attn_ab_lin: float,
    attn_ab_const: float,
    inv_fa: float,
    inv_ma: float,
    comm_per_n: float,
    overhead: float,
) -> float:
    """Latency of one prefill/decode iteration over ``contexts``.

    GEMM coefficients are per-operator: flops = a*N, bytes = b*N + c, with
    multiplicity w (identical layers are folded into w).  Attention
    coefficients are per-request in the context length s:
    prefill flops = af*s*s, bytes = ab_lin*s; decode flops = af*s,
    bytes = ab_const + ab_lin*s.
    """
    if prefill:
        n = 0.0
        for s in contexts:
            n += s
    else:
        n = float(len(contexts))

    total = overhead + comm_per_n * n

    for i in range(len(gemm_w)):
        tc = gemm_a[i] * n * inv_fg
        tm = (gemm_b[i] * n + gemm_c[i]) * inv_mg
        total += gemm_w[i] * (tc if tc > tm else tm)

    attn = 0.0
    if prefill:
        for s in contexts:
            fl = attn_af * s * s
            by = attn_ab_lin * s
            tc = fl * inv_fa
            tm = by * inv_ma
            attn += tc if tc > tm else tm
    else:
        for s in contexts:
            fl = attn_af * s
            by = attn_ab_const + attn_ab_lin * s
            tc = fl * inv_fa
            tm = by * inv_ma
            attn += tc if tc > tm else tm
    return total + attn_weight * attn
