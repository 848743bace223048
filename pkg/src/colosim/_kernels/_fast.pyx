# cython: language_level=3
"""Compiled twin of the pure-Python iteration-latency kernel."""

BACKEND = "fast"


def iteration_latency(
    bint prefill,
    contexts,
    double[::1] gemm_w,
    double[::1] gemm_a,
    double[::1] gemm_b,
    double[::1] gemm_c,
    double inv_fg,
    double inv_mg,
    double attn_weight,
    double attn_af,
    double attn_ab_lin,
    double attn_ab_const,
    double inv_fa,
    double inv_ma,
    double comm_per_n,
    double overhead,
):
    cdef Py_ssize_t i, k, m = len(contexts)
    cdef double n, total, tc, tm, attn, s, fl, by

    if prefill:
        n = 0.0
        for k in range(m):
            n += <double> contexts[k]
    else:
        n = <double> m

    total = overhead + comm_per_n * n

    for i in range(gemm_w.shape[0]):
        tc = gemm_a[i] * n * inv_fg
        tm = (gemm_b[i] * n + gemm_c[i]) * inv_mg
        total += gemm_w[i] * (tc if tc > tm else tm)

    attn = 0.0
    if prefill:
        for k in range(m):
            s = <double> contexts[k]
            fl = attn_af * s * s
            by = attn_ab_lin * s
            tc = fl * inv_fa
            tm = by * inv_ma
            attn += tc if tc > tm else tm
    else:
        for k in range(m):
            s = <double> contexts[k]
            fl = attn_af * s
            by = attn_ab_const + attn_ab_lin * s
            tc = fl * inv_fa
            tm = by * inv_ma
            attn += tc if tc > tm else tm
    return total + attn_weight * attn
