"""Operator cost formulas against hand arithmetic and random oracles."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colosim.perf import (
    OpCost,
    attention_cost,
    comm_latency,
    gemm_cost,
    kv_cache_bytes,
    op_latency,
)
from oracles import oracle_attention, oracle_gemm, oracle_kv_bytes


class TestGemmCost:
    def test_unit_dimensions(self):
        c = gemm_cost(1, 1, 1, 2)
        assert (c.flops, c.bytes) == (2, 6)

    def test_hand_arithmetic(self):
        c = gemm_cost(128, 4096, 4096, 2)
        assert c.flops == 4294967296
        assert c.bytes == 35651584

    def test_zero_rows_is_weight_traffic_only(self):
        c = gemm_cost(0, 4096, 4096, 2)
        assert c.flops == 0
        assert c.bytes == 33554432

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            gemm_cost(-1, 4, 4, 2)
        with pytest.raises(ValueError):
            gemm_cost(1, 0, 4, 2)

    @given(
        n=st.integers(0, 10_000),
        d_in=st.integers(1, 65_536),
        d_out=st.integers(1, 65_536),
        d=st.integers(1, 8),
    )
    @settings(max_examples=200)
    def test_matches_oracle(self, n, d_in, d_out, d):
        c = gemm_cost(n, d_in, d_out, d)
        assert (c.flops, c.bytes) == oracle_gemm(n, d_in, d_out, d)


class TestAttentionCost:
    def test_unit_case(self):
        c = attention_cost(1, 1, 1, 1, 1, 2)
        assert (c.flops, c.bytes) == (4, 8)

    def test_decode_shape(self):
        c = attention_cost(1, 1024, 3584, 28, 4, 2)
        assert (c.flops, c.bytes) == (14680064, 102774784)

    def test_prefill_shape(self):
        c = attention_cost(1024, 1024, 3584, 28, 4, 2)
        assert c.flops == 15032385536
        assert c.bytes == 117440512

    def test_rejects_group_mismatch(self):
        with pytest.raises(ValueError):
            attention_cost(1, 1, 64, 7, 3, 2)

    @given(
        sq=st.integers(1, 8192),
        skv=st.integers(1, 8192),
        heads=st.integers(1, 64),
        group=st.integers(1, 8),
        head_dim=st.sampled_from([32, 64, 128]),
        d=st.integers(1, 4),
    )
    @settings(max_examples=200)
    def test_matches_oracle(self, sq, skv, heads, group, head_dim, d):
        hq = heads * group
        c = attention_cost(sq, skv, hq * head_dim, hq, heads, d)
        assert (c.flops, c.bytes) == oracle_attention(sq, skv, hq * head_dim, hq, heads, d)


class TestOpLatency:
    def test_empty_operator(self):
        assert op_latency(OpCost(0, 0), 1e12, 1e12) == 0.0

    def test_direct_evaluation(self):
        assert op_latency(OpCost(int(4e9), int(4e7)), 2e12, 1e12) == pytest.approx(2.0e-3, rel=1e-15)

    def test_ridge_point(self):
        assert op_latency(OpCost(int(1e9), int(1e9)), 1e12, 1e12) == 1.0e-3

    def test_rejects_nonpositive_rates(self):
        with pytest.raises(ValueError):
            op_latency(OpCost(1, 1), 0.0, 1e12)

    @given(
        f1=st.integers(0, 10**15),
        b1=st.integers(0, 10**15),
        f2=st.integers(0, 10**12),
        b2=st.integers(0, 10**12),
        rf=st.floats(1e9, 1e15),
        rb=st.floats(1e9, 1e13),
    )
    @settings(max_examples=200)
    def test_monotone(self, f1, b1, f2, b2, rf, rb):
        base = op_latency(OpCost(f1, b1), rf, rb)
        assert op_latency(OpCost(f1 + f2, b1 + b2), rf, rb) >= base
        assert op_latency(OpCost(f1, b1), rf * 2, rb) <= base
        assert op_latency(OpCost(f1, b1), rf, rb * 2) <= base


class TestCommLatency:
    def test_zero(self):
        assert comm_latency(0, 1e10) == 0.0

    def test_direct_division(self):
        assert comm_latency(1e9, 1e10) == pytest.approx(0.1, rel=1e-15)

    def test_kv_transfer_composition(self, model_7b):
        nbytes = kv_cache_bytes(model_7b, 2048)
        assert comm_latency(nbytes, 1e10) == pytest.approx(nbytes / 1e10, rel=1e-15)


class TestKvCacheBytes:
    def test_zero_tokens(self, model_7b):
        assert kv_cache_bytes(model_7b, 0) == 0

    def test_unit_dims(self, unit_model):
        assert kv_cache_bytes(unit_model, 1) == 4

    def test_hand_arithmetic(self, model_7b):
        assert kv_cache_bytes(model_7b, 1024) == 58720256

    @given(a=st.integers(0, 1_000_000), b=st.integers(0, 1_000_000))
    @settings(max_examples=100)
    def test_additive_over_disjoint_token_sets(self, a, b, model_7b):
        assert kv_cache_bytes(model_7b, a) + kv_cache_bytes(model_7b, b) == kv_cache_bytes(model_7b, a + b)

    @given(tokens=st.integers(0, 10**7))
    @settings(max_examples=100)
    def test_matches_oracle(self, tokens, model_7b):
        assert kv_cache_bytes(model_7b, tokens) == oracle_kv_bytes(model_7b, tokens)
