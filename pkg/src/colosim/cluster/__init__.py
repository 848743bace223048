"""Discrete-event cluster simulation."""

from .config import InstanceKind, PolicyConfig, SimConfig, SLOConfig
from .engine import (
    Engine,
    InfeasibleScenarioError,
    InvariantViolation,
    SchedulingError,
)
from .instance import DecodeRun, Instance, PrefillRun
from .request import RequestState, SimRequest

__all__ = [
    "DecodeRun",
    "Engine",
    "InfeasibleScenarioError",
    "Instance",
    "InstanceKind",
    "InvariantViolation",
    "PolicyConfig",
    "PrefillRun",
    "RequestState",
    "SchedulingError",
    "SimConfig",
    "SimRequest",
    "SLOConfig",
]
