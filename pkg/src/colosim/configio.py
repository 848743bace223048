"""Config file schema (YAML), resolved-config snapshots, and run manifests.

One structured file drives a run; the manifest written next to every output
embeds the fully resolved config, trace digests, and seed, so a run can be
reproduced exactly from the manifest alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional

import yaml

from . import __version__
from .cluster.config import PolicyConfig, SimConfig, SLOConfig
from .perf.types import HardwareProfile, ModelSpec


class ConfigError(ValueError):
    """A config field is missing or invalid; the message names the field."""


_MODEL_FIELDS = (
    "num_layers", "hidden_dim", "num_q_heads", "num_kv_heads", "head_dim",
    "mlp_intermediate_dim", "vocab_dim", "bytes_per_value", "tp_degree",
)
_HW_FIELDS = (
    "gemm_flops", "prefill_attn_flops", "decode_attn_flops", "gemm_bandwidth",
    "attn_bandwidth", "prefill_overhead_s", "decode_overhead_s",
    "comm_bandwidth", "kv_capacity_bytes",
)


def _section(data: dict, name: str) -> dict:
    if name not in data:
        raise ConfigError(f"missing section {name!r}")
    if not isinstance(data[name], dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return data[name]


def _build(cls, fields: dict, path: str):
    try:
        return cls(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _typed(section: dict, path: str, allowed: tuple[str, ...]) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return dict(section)


def config_from_dict(data: dict) -> tuple[SimConfig, dict]:
    """Build a SimConfig from a parsed config mapping.

    Returns the config plus the leftover ``sweep`` section (if present).
    """
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    model = _build(ModelSpec, _typed(_section(data, "model"), "model", _MODEL_FIELDS), "model")
    hw = _section(data, "hardware")
    relaxed = _build(
        HardwareProfile, _typed(_section(hw, "relaxed"), "hardware.relaxed", _HW_FIELDS), "hardware.relaxed"
    )
    strict = _build(
        HardwareProfile, _typed(_section(hw, "strict"), "hardware.strict", _HW_FIELDS), "hardware.strict"
    )
    slo = _build(SLOConfig, _typed(data.get("slo", {}), "slo", tuple(SLOConfig.__dataclass_fields__)), "slo")
    policy = _build(
        PolicyConfig, _typed(data.get("policy", {}), "policy", tuple(PolicyConfig.__dataclass_fields__)), "policy"
    )
    cluster = _typed(
        data.get("cluster", {}),
        "cluster",
        ("num_relaxed", "num_strict", "horizon_s", "sample_period_s", "migration_bandwidth"),
    )
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: must be an integer")
    config = _build(
        SimConfig,
        dict(
            model=model,
            relaxed_hw=relaxed,
            strict_hw=strict,
            slo=slo,
            policy=policy,
            seed=seed,
            **cluster,
        ),
        "cluster",
    )
    sweep = data.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("sweep: must be a mapping")
    return config, sweep


def load_config(path: str | Path) -> tuple[SimConfig, dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data or {})


def config_to_dict(config: SimConfig) -> dict:
    return {
        "model": asdict(config.model),
        "hardware": {"relaxed": asdict(config.relaxed_hw), "strict": asdict(config.strict_hw)},
        "cluster": {
            "num_relaxed": config.num_relaxed,
            "num_strict": config.num_strict,
            "horizon_s": config.horizon_s,
            "sample_period_s": config.sample_period_s,
            "migration_bandwidth": config.migration_bandwidth,
        },
        "slo": asdict(config.slo),
        "policy": asdict(config.policy),
        "seed": config.seed,
    }


def default_config_yaml() -> str:
    """Reference config with every supported key at its default."""
    from .presets import DESK_MODEL, desk_profile

    cfg = SimConfig(model=DESK_MODEL, relaxed_hw=desk_profile(), strict_hw=desk_profile())
    data = config_to_dict(cfg)
    data["sweep"] = {"qps_grid": [0.5, 1.0, 2.0, 4.0, 8.0], "bisect_iters": 3}
    return yaml.safe_dump(data, sort_keys=True)


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_dir: Path,
    config: SimConfig,
    *,
    online_trace: Optional[Path] = None,
    offline_trace: Optional[Path] = None,
    outputs: list[str] = (),
    extra: Optional[dict[str, Any]] = None,
) -> Path:
    traces = {}
    if online_trace is not None:
        traces["online"] = {"path": str(online_trace), "sha256": file_digest(online_trace)}
    if offline_trace is not None:
        traces["offline"] = {"path": str(offline_trace), "sha256": file_digest(offline_trace)}
    manifest = {
        "tool": "colosim",
        "version": __version__,
        "seed": config.seed,
        "policy": config.policy.name,
        "config": config_to_dict(config),
        "traces": traces,
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    data = json.loads(path.read_text())
    if data.get("tool") != "colosim":
        raise ConfigError(f"{path} is not a colosim manifest")
    return data
