"""Trace ingestion and the rate-scaling transforms."""

from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colosim.presets import bursty_online_trace
from colosim.workload import (
    OFFLINE,
    ONLINE,
    Trace,
    TraceFormatError,
    TraceRecord,
    load_trace,
    offline_stream,
    rate_histogram,
    save_trace,
    scale_down,
    scale_up,
)


def rec(i, t, prompt=100, output=20, klass=ONLINE):
    return TraceRecord(id=f"r{i}", arrival_ts=t, prompt_len=prompt, output_len=output, request_class=klass)


class TestLoadTrace:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("id,arrival_ts,prompt_len,output_len,class\n")
        assert len(load_trace(p)) == 0

    def test_sorts_by_arrival(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text(
            "arrival_ts,prompt_len,output_len,class\n"
            "3.0,10,5,online\n1.0,20,6,offline\n2.0,30,7,online\n"
        )
        trace = load_trace(p)
        assert [r.arrival_ts for r in trace] == [1.0, 2.0, 3.0]

    def test_malformed_row_names_line(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("arrival_ts,prompt_len,output_len,class\n1.0,10,5,online\n2.0,oops,5,online\n")
        with pytest.raises(TraceFormatError, match="line 3"):
            load_trace(p)

    def test_negative_length_rejected(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("arrival_ts,prompt_len,output_len,class\n1.0,-5,5,online\n")
        with pytest.raises(TraceFormatError):
            load_trace(p)

    def test_jsonl_roundtrip(self, tmp_path):
        trace = Trace([rec(i, float(i), 50 + i, 10 + i) for i in range(5)])
        p = tmp_path / "t.jsonl"
        save_trace(trace, p)
        back = load_trace(p)
        assert [r.id for r in back] == [r.id for r in trace]
        assert [r.prompt_len for r in back] == [r.prompt_len for r in trace]

    def test_csv_roundtrip_preserves_floats(self, tmp_path):
        trace = Trace([rec(0, 0.1234567890123), rec(1, 7.25)])
        p = tmp_path / "t.csv"
        save_trace(trace, p)
        back = load_trace(p)
        assert [r.arrival_ts for r in back] == [0.1234567890123, 7.25]

    def test_fixture_mean_prompt_length(self, tmp_path):
        """Synthetic pool tuned to the production online-trace average."""
        target = 1892.47
        n = 200
        lens = np.full(n, int(target))
        # Distribute the fractional remainder to hit the mean exactly.
        extra = round((target - int(target)) * n)
        lens[:extra] += 1
        trace = Trace(
            [rec(i, float(i), prompt=int(lens[i]), output=1062) for i in range(n)]
        )
        assert trace.mean_prompt_len() == pytest.approx(target, abs=1e-9)


class TestScaleDown:
    def test_identity(self):
        t = Trace([rec(i, float(i)) for i in range(100)])
        out = scale_down(t, 1.0, seed=1)
        assert [r.id for r in out] == [r.id for r in t]

    def test_binomial_bound(self):
        t = Trace([rec(i, float(i) / 10) for i in range(10_000)])
        out = scale_down(t, 0.5, seed=7)
        sigma = (10_000 * 0.25) ** 0.5
        assert abs(len(out) - 5000) <= 3 * sigma

    def test_deterministic(self):
        t = Trace([rec(i, float(i)) for i in range(500)])
        a = scale_down(t, 0.3, seed=9)
        b = scale_down(t, 0.3, seed=9)
        assert [r.id for r in a] == [r.id for r in b]

    def test_timestamps_unchanged(self):
        t = Trace([rec(i, float(i) * 1.5) for i in range(200)])
        out = scale_down(t, 0.5, seed=2)
        originals = {r.id: r.arrival_ts for r in t}
        assert all(r.arrival_ts == originals[r.id] for r in out)

    def test_spike_duration_preserved(self):
        """A five-minute spike covers the same buckets after thinning."""
        base = [rec(i, i * 2.0) for i in range(300)]  # 0.5 qps over 600 s
        spike = [rec(1000 + i, 200.0 + i * 0.05) for i in range(6000)]  # 20 qps in [200, 500)
        t = Trace(base + spike)
        out = scale_down(t, 0.5, seed=3)

        def spike_buckets(trace, keep_ratio):
            hist = rate_histogram(trace, 60.0)
            return [i for i, c in enumerate(hist) if c > keep_ratio * 3 * 0.5 * 60]

        assert spike_buckets(out, 0.5) == spike_buckets(t, 1.0) == [3, 4, 5, 6, 7, 8]


class TestScaleUp:
    def test_identity(self):
        t = Trace([rec(i, float(i)) for i in range(50)])
        out = scale_up(t, 1.0, seed=1)
        assert [r.id for r in out] == [r.id for r in t]

    def test_doubles_rate_per_bucket(self):
        t = bursty_online_trace(duration_s=1200, base_qps=4.0, spikes=((300, 300, 3.0),), seed=5)
        out = scale_up(t, 2.0, seed=6)
        h1 = rate_histogram(t, 60.0)
        h2 = rate_histogram(out, 60.0)
        assert len(h2) == len(h1)
        for a, b in zip(h1, h2):
            assert b == pytest.approx(2 * a, rel=0.10)

    def test_peak_trough_ratio_preserved(self):
        t = bursty_online_trace(duration_s=1200, base_qps=4.0, spikes=((300, 300, 4.0),), seed=5)
        out = scale_up(t, 2.0, seed=8)
        h1 = np.array(rate_histogram(t, 120.0), dtype=float)
        h2 = np.array(rate_histogram(out, 120.0), dtype=float)
        r1 = h1.max() / h1.min()
        r2 = h2.max() / h2.min()
        assert r2 == pytest.approx(r1, rel=0.10)

    def test_timestamps_stay_in_span(self):
        t = Trace([rec(i, 10.0 + i * 0.5) for i in range(200)])
        out = scale_up(t, 3.0, seed=4)
        assert all(10.0 <= r.arrival_ts <= t.span for r in out)

    def test_replicas_copy_length_pairs(self):
        t = Trace([rec(i, float(i), prompt=100 + i, output=10 + i) for i in range(50)])
        out = scale_up(t, 2.5, seed=12)
        original_pairs = {(r.prompt_len, r.output_len) for r in t}
        assert all((r.prompt_len, r.output_len) in original_pairs for r in out)

    def test_marginal_is_replication_of_original(self):
        t = Trace([rec(i, float(i), prompt=100 + (i % 7), output=10) for i in range(100)])
        out = scale_up(t, 2.0, seed=3)
        base = Counter((r.prompt_len, r.output_len) for r in t)
        scaled = Counter((r.prompt_len, r.output_len) for r in out)
        assert set(scaled) <= set(base)

    def test_deterministic(self):
        t = Trace([rec(i, float(i)) for i in range(100)])
        a = scale_up(t, 1.7, seed=42)
        b = scale_up(t, 1.7, seed=42)
        assert [(r.id, r.arrival_ts) for r in a] == [(r.id, r.arrival_ts) for r in b]

    @given(factor=st.floats(1.0, 4.0), seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_expected_count(self, factor, seed):
        t = Trace([rec(i, float(i)) for i in range(200)])
        out = scale_up(t, factor, seed)
        assert abs(len(out) - factor * 200) <= 1


class TestBurstShapeCorrelation:
    @pytest.mark.parametrize("bucket", [10.0, 30.0, 60.0])
    def test_scaled_histograms_correlate(self, bucket):
        t = bursty_online_trace(duration_s=900, base_qps=3.0, spikes=((200, 120, 4.0), (600, 60, 5.0)), seed=1)
        for scaled in (scale_up(t, 2.0, seed=2), scale_down(t, 0.5, seed=2)):
            h1 = np.array(rate_histogram(t, bucket), dtype=float)
            h2 = np.array(rate_histogram(scaled, bucket), dtype=float)
            m = min(len(h1), len(h2))
            corr = np.corrcoef(h1[:m], h2[:m])[0, 1]
            assert corr >= 0.95


class TestOfflineStream:
    def test_uniform_spacing(self):
        out = offline_stream([(100, 10)], qps=2.0, start_ts=0.0, count=3)
        assert [r.arrival_ts for r in out] == [0.0, 0.5, 1.0]
        assert all(r.request_class == OFFLINE for r in out)

    def test_empty(self):
        assert len(offline_stream([(100, 10)], 1.0, 0.0, 0)) == 0

    def test_pool_means_preserved(self):
        from colosim.presets import offline_length_pool

        pool = offline_length_pool(count=256, seed=7)
        out = offline_stream(pool, qps=4.0, start_ts=0.0, count=256)
        assert out.mean_prompt_len() == pytest.approx(1200.52, rel=0.01)
        assert out.mean_output_len() == pytest.approx(671.51, rel=0.01)


class TestRateHistogram:
    def test_empty(self):
        assert rate_histogram(Trace([]), 1.0) == []

    def test_counting(self):
        t = Trace([rec(0, 0.0), rec(1, 0.1), rec(2, 1.5)])
        assert rate_histogram(t, 1.0) == [2, 1]

    def test_scale_up_ratio(self):
        t = bursty_online_trace(duration_s=600, base_qps=5.0, spikes=(), seed=9)
        out = scale_up(t, 2.0, seed=10)
        h1 = rate_histogram(t, 60.0)
        h2 = rate_histogram(out, 60.0)
        for a, b in zip(h1, h2):
            assert b == pytest.approx(2 * a, rel=0.10)
