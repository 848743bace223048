"""Latency metric definitions and SLO accounting."""

from __future__ import annotations

import pytest

from colosim.cluster.config import SLOConfig
from colosim.metrics import (
    MetricsLog,
    RequestMetrics,
    is_violation,
    offline_goodput,
    tpot,
    ttft,
    violation_rate,
)
from colosim.workload import OFFLINE, ONLINE


def make_rec(rid="r", klass=ONLINE, arrival=0.0, emits=(), complete=True, output=None):
    emits = list(emits)
    return RequestMetrics(
        id=rid,
        request_class=klass,
        arrival_ts=arrival,
        prompt_len=100,
        output_len=output if output is not None else max(1, len(emits)),
        first_token_ts=emits[0] if emits else None,
        completion_ts=emits[-1] if (emits and complete) else None,
        emit_ts=emits,
        eviction_count=0,
        migration_count=0,
    )


class TestTtftTpot:
    def test_ttft(self):
        assert ttft(make_rec(arrival=0.0, emits=[1.5])) == 1.5

    def test_tpot_mean_gap(self):
        assert tpot(make_rec(emits=[1.0, 1.1, 1.3])) == pytest.approx(0.15)

    def test_tpot_undefined_for_single_token(self):
        with pytest.raises(ValueError):
            tpot(make_rec(emits=[1.0]))

    def test_ttft_undefined_without_tokens(self):
        with pytest.raises(ValueError):
            ttft(make_rec(emits=[], complete=False))


class TestViolationRate:
    slo = SLOConfig(ttft_slo=2.0, tpot_slo=0.1, violation_threshold=0.03)

    def test_all_within(self):
        log = MetricsLog(requests=[make_rec(rid=f"r{i}", emits=[0.5, 0.55, 0.6]) for i in range(10)])
        assert violation_rate(log, self.slo) == 0.0

    def test_one_of_fifty(self):
        recs = [make_rec(rid=f"r{i}", emits=[0.5, 0.55]) for i in range(49)]
        recs.append(make_rec(rid="slow", emits=[5.0, 5.05]))  # ttft 5 > 2
        assert violation_rate(MetricsLog(requests=recs), self.slo) == pytest.approx(0.02)

    def test_inflight_counts_as_violation(self):
        recs = [make_rec(rid="ok", emits=[0.5, 0.55]), make_rec(rid="stuck", emits=[0.5], complete=False)]
        assert violation_rate(MetricsLog(requests=recs), self.slo) == pytest.approx(0.5)

    def test_tpot_violation(self):
        rec = make_rec(emits=[0.5, 0.8, 1.1])  # gaps of 0.3 > 0.1
        assert is_violation(rec, self.slo)

    def test_single_token_complete_not_tpot_violating(self):
        rec = make_rec(emits=[0.5], output=1)
        assert not is_violation(rec, self.slo)

    def test_class_filter(self):
        recs = [
            make_rec(rid="on", klass=ONLINE, emits=[9.0, 9.05]),
            make_rec(rid="off", klass=OFFLINE, emits=[0.5, 0.55]),
        ]
        log = MetricsLog(requests=recs)
        assert violation_rate(log, self.slo, ONLINE) == 1.0
        assert violation_rate(log, self.slo, OFFLINE) == 0.0

    def test_monotone_in_thresholds(self):
        import numpy as np

        rng = np.random.default_rng(5)
        recs = []
        for i in range(200):
            start = float(rng.uniform(0, 3))
            gaps = rng.uniform(0.01, 0.2, size=10)
            emits = list(start + np.cumsum(gaps))
            recs.append(make_rec(rid=f"r{i}", emits=emits))
        log = MetricsLog(requests=recs)
        rates = []
        for ttft_slo in (0.5, 1.0, 2.0, 4.0):
            for tpot_slo in (0.05, 0.1, 0.2):
                rates.append(((ttft_slo, tpot_slo), violation_rate(log, SLOConfig(ttft_slo=ttft_slo, tpot_slo=tpot_slo))))
        for (s1, r1) in rates:
            for (s2, r2) in rates:
                if s2[0] >= s1[0] and s2[1] >= s1[1]:
                    assert r2 <= r1


class TestGoodput:
    def test_counts_completed_offline_once(self):
        recs = [
            make_rec(rid="a", klass=OFFLINE, emits=[1.0, 2.0], output=2),
            make_rec(rid="b", klass=OFFLINE, emits=[1.0], complete=False, output=5),
            make_rec(rid="c", klass=ONLINE, emits=[1.0, 2.0], output=2),
        ]
        log = MetricsLog(requests=recs, duration_s=10.0)
        assert offline_goodput(log) == pytest.approx(0.2)  # only "a": 2 tokens / 10 s
