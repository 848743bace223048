"""Scheduling policies and their decision kernels."""

from ..cluster.config import SimConfig
from .algorithms import (
    NO_MIGRATION,
    SHORTEST,
    InsufficientPoolError,
    LengthPreference,
    gating_admits,
    max_len_within,
    migration_decision,
    mix_decoding_selection,
    select_eviction_victims,
)
from .base import Policy
from .baselines import BasePdPolicy, OnlinePriorityPolicy
from .ooco import OocoPolicy

_POLICIES = {
    "ooco": OocoPolicy,
    "base_pd": BasePdPolicy,
    "online_priority": OnlinePriorityPolicy,
}


def make_policy(config: SimConfig) -> Policy:
    try:
        cls = _POLICIES[config.policy.name]
    except KeyError:
        raise ValueError(f"unknown policy {config.policy.name!r}") from None
    return cls(config)


__all__ = [
    "BasePdPolicy",
    "gating_admits",
    "InsufficientPoolError",
    "LengthPreference",
    "make_policy",
    "max_len_within",
    "migration_decision",
    "mix_decoding_selection",
    "NO_MIGRATION",
    "OnlinePriorityPolicy",
    "OocoPolicy",
    "Policy",
    "select_eviction_victims",
    "SHORTEST",
]
