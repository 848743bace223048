from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from colosim.perf.types import HardwareProfile, ModelSpec
from colosim.presets import DESK_MODEL, QWEN7B_SHAPED, REFERENCE_PROFILE, desk_profile


@pytest.fixture(scope="session")
def model_7b() -> ModelSpec:
    return QWEN7B_SHAPED


@pytest.fixture(scope="session")
def reference_profile() -> HardwareProfile:
    return REFERENCE_PROFILE


@pytest.fixture(scope="session")
def desk_model() -> ModelSpec:
    return DESK_MODEL


@pytest.fixture(scope="session")
def desk_hw() -> HardwareProfile:
    return desk_profile()


UNIT_MODEL = ModelSpec(
    num_layers=1,
    hidden_dim=1,
    num_q_heads=1,
    num_kv_heads=1,
    head_dim=1,
    mlp_intermediate_dim=1,
    vocab_dim=1,
    bytes_per_value=2,
    tp_degree=1,
)


@pytest.fixture(scope="session")
def unit_model() -> ModelSpec:
    return UNIT_MODEL
