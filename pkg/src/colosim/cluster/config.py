"""Simulation configuration objects."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..perf.types import HardwareProfile, ModelSpec


class InstanceKind(Enum):
    LATENCY_RELAXED = "relaxed"
    LATENCY_STRICT = "strict"


POLICY_NAMES = ("ooco", "base_pd", "online_priority")


@dataclass(frozen=True)
class SLOConfig:
    ttft_slo: float = 5.0
    tpot_slo: float = 0.1
    violation_threshold: float = 0.03
    slo_margin: float = 0.1

    def __post_init__(self) -> None:
        if self.ttft_slo <= 0 or self.tpot_slo <= 0:
            raise ValueError("SLO bounds must be positive")
        if not 0 < self.violation_threshold < 1:
            raise ValueError("violation_threshold must be in (0, 1)")
        if not 0 <= self.slo_margin < 1:
            raise ValueError("slo_margin must be in [0, 1)")


@dataclass(frozen=True)
class PolicyConfig:
    name: str = "ooco"
    k_random: int = 8
    gating_window_s: float = 300.0
    decode_cap: Optional[int] = None       # online_priority; None computes it from the trace
    spike_factor: float = 2.0              # online_priority spike detector
    spike_window_s: float = 10.0
    overload_mode: str = "best_effort"     # or "sacrifice"
    probe_max_len: int = 16384             # migration length-probe ceiling
    capacity_threshold: float = 1.0        # KV fraction considered capacity-bound
    gating_reserve_output: bool = True     # gate admission on prompt+output footprint

    def __post_init__(self) -> None:
        if self.name not in POLICY_NAMES:
            raise ValueError(f"policy.name must be one of {POLICY_NAMES}, got {self.name!r}")
        if self.k_random < 0:
            raise ValueError("k_random must be >= 0")
        if self.overload_mode not in ("best_effort", "sacrifice"):
            raise ValueError("overload_mode must be best_effort or sacrifice")
        if self.probe_max_len < 1:
            raise ValueError("probe_max_len must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    model: ModelSpec
    relaxed_hw: HardwareProfile
    strict_hw: HardwareProfile
    num_relaxed: int = 1
    num_strict: int = 1
    slo: SLOConfig = field(default_factory=SLOConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0
    horizon_s: Optional[float] = None      # None runs to completion
    sample_period_s: float = 1.0
    migration_bandwidth: Optional[float] = None  # None uses strict_hw.comm_bandwidth
    record_events: bool = False
    check_invariants: bool = False

    def __post_init__(self) -> None:
        if self.num_relaxed < 1 or self.num_strict < 1:
            raise ValueError("disaggregated policies need at least one instance of each kind")
        if self.sample_period_s <= 0:
            raise ValueError("sample_period_s must be positive")
        if self.migration_bandwidth is not None and self.migration_bandwidth <= 0:
            raise ValueError("migration_bandwidth must be positive")
