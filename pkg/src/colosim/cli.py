"""Command-line entry point.

Subcommands: simulate, sweep, calibrate, scale-trace, report.
Exit codes: 0 success, 2 config/schema error, 3 infeasible scenario.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import yaml

from . import __version__
from .cluster.config import POLICY_NAMES
from .cluster.engine import Engine, InfeasibleScenarioError
from .configio import (
    ConfigError,
    config_from_dict,
    file_digest,
    load_config,
    load_manifest,
    write_manifest,
)
from .metrics import summarize, write_metrics
from .perf.calibrate import UnderdeterminedSamplesError, calibrate, load_calibration_samples
from .sweep import BaselineInfeasibleError, run_sweep, write_sweep_csv
from .workload import Trace, load_trace, rate_histogram, save_histogram, save_trace, scale_down, scale_up

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _apply_overrides(config, seed, policy):
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    if policy is not None:
        config = dataclasses.replace(
            config, policy=dataclasses.replace(config.policy, name=policy)
        )
    return config


@click.group()
@click.version_option(version=__version__, prog_name="colosim")
def main() -> None:
    """Simulate co-located online/offline LLM serving on a
    latency-disaggregated cluster."""


_seed_option = click.option(
    "--seed", type=int, default=None, envvar="COLOSIM_SEED",
    help="Override the config seed (env fallback: COLOSIM_SEED).",
)
_policy_option = click.option(
    "--policy", type=click.Choice(POLICY_NAMES), default=None,
    help="Override the configured policy.",
)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")
@click.option("--from-manifest", type=click.Path(), default=None, help="Reproduce a run from its manifest.")
@click.option("--online-trace", type=click.Path(), default=None)
@click.option("--offline-trace", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_seed_option
@_policy_option
@click.option("--verbose-events", is_flag=True, help="Export the event log (events.jsonl).")
def simulate(config_path, from_manifest, online_trace, offline_trace, out_dir, seed, policy, verbose_events):
    """Run one simulation and export metrics plus a run manifest."""
    try:
        if from_manifest:
            manifest = load_manifest(from_manifest)
            config, _ = config_from_dict(manifest["config"])
            traces = manifest.get("traces", {})
            online_trace = online_trace or traces.get("online", {}).get("path")
            offline_trace = offline_trace or traces.get("offline", {}).get("path")
            for name, ref in traces.items():
                if Path(ref["path"]).exists() and file_digest(ref["path"]) != ref["sha256"]:
                    raise ConfigError(f"{name} trace {ref['path']} does not match manifest digest")
        elif config_path:
            config, _ = load_config(config_path)
        else:
            raise ConfigError("either --config or --from-manifest is required")
        config = _apply_overrides(config, seed, policy)
        if online_trace is None:
            raise ConfigError("--online-trace is required")
        online = load_trace(online_trace)
        offline = load_trace(offline_trace) if offline_trace else Trace([])
        if verbose_events:
            config = dataclasses.replace(config, record_events=True)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (OSError, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))

    out = Path(out_dir)
    try:
        log = Engine(config, online, offline).run()
    except InfeasibleScenarioError as exc:
        _fail(EXIT_INFEASIBLE, str(exc))
    written = write_metrics(log, config.slo, out)
    write_manifest(
        out,
        config,
        online_trace=Path(online_trace),
        offline_trace=Path(offline_trace) if offline_trace else None,
        outputs=[p.name for p in written],
    )
    summary = summarize(log, config.slo)
    click.echo(
        f"simulated {len(log.requests)} requests over {log.duration_s:.1f}s: "
        f"online violation rate {summary['online']['violation_rate']:.4f}, "
        f"offline goodput {summary['offline_goodput_tokens_per_s']:.1f} tok/s"
    )
    click.echo(f"outputs in {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--online-trace", type=click.Path(), required=True)
@click.option("--offline-trace", type=click.Path(), required=True,
              help="Trace whose (prompt, output) pairs form the offline pool.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_seed_option
@_policy_option
@click.option("--workers", type=int, default=0, show_default="all cores",
              help="Parallel sweep workers (0 = all cores).")
@click.option("--qps-grid", type=str, default=None, help="Comma-separated QPS grid override.")
@click.option("--bisect-iters", type=int, default=None)
def sweep(config_path, online_trace, offline_trace, out_dir, seed, policy, workers, qps_grid, bisect_iters):
    """Find the maximum offline QPS below the online violation threshold."""
    try:
        config, sweep_cfg = load_config(config_path)
        config = _apply_overrides(config, seed, policy)
        online = load_trace(online_trace)
        pool = load_trace(offline_trace)
        if len(pool) == 0:
            raise ConfigError("offline pool trace is empty")
        grid = sweep_cfg.get("qps_grid", [0.5, 1.0, 2.0, 4.0, 8.0])
        if qps_grid:
            grid = [float(x) for x in qps_grid.split(",") if x.strip()]
        iters = bisect_iters if bisect_iters is not None else int(sweep_cfg.get("bisect_iters", 3))
        if workers == 0:
            import os

            workers = os.cpu_count() or 1
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (OSError, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run_sweep(
            config, online, list(pool), grid, bisect_iters=iters, workers=workers
        )
    except BaselineInfeasibleError as exc:
        _fail(EXIT_INFEASIBLE, str(exc))
    except InfeasibleScenarioError as exc:
        _fail(EXIT_INFEASIBLE, str(exc))
    write_sweep_csv(result, out / "sweep.csv")
    write_manifest(
        out,
        config,
        online_trace=Path(online_trace),
        offline_trace=Path(offline_trace),
        outputs=["sweep.csv"],
        extra={"sweep": {"qps_grid": [float(q) for q in grid], "bisect_iters": iters}},
    )
    for p in result.points:
        click.echo(
            f"qps={p.offline_qps:8.3f}  violation={p.online_violation_rate:6.4f}  "
            f"goodput={p.offline_goodput:10.1f} tok/s"
        )
    click.echo(f"max effective offline qps: {result.max_effective_offline_qps}")


@main.command("scale-trace")
@click.option("--input", "in_path", type=click.Path(), required=True)
@click.option("--output", "out_path", type=click.Path(), required=True)
@click.option("--mode", type=click.Choice(["down", "up"]), required=True)
@click.option("--ratio", type=float, default=None, help="Keep ratio for mode=down.")
@click.option("--factor", type=float, default=None, help="Rate factor for mode=up.")
@_seed_option
@click.option("--histogram", type=click.Path(), default=None, help="Also export a rate histogram CSV.")
@click.option("--bucket-seconds", type=float, default=60.0, show_default=True)
def scale_trace(in_path, out_path, mode, ratio, factor, seed, histogram, bucket_seconds):
    """Rescale a trace's aggregate request rate, preserving burst shape."""
    try:
        trace = load_trace(in_path)
        seed = seed if seed is not None else 0
        if mode == "down":
            if ratio is None:
                raise ConfigError("--ratio is required for mode=down")
            scaled = scale_down(trace, ratio, seed)
        else:
            if factor is None:
                raise ConfigError("--factor is required for mode=up")
            scaled = scale_up(trace, factor, seed)
        save_trace(scaled, out_path)
        if histogram:
            save_histogram(rate_histogram(scaled, bucket_seconds), bucket_seconds, histogram)
    except (ConfigError, ValueError, OSError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    click.echo(f"{len(trace)} -> {len(scaled)} records written to {out_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True,
              help="Config supplying the model shape and default profile.")
@click.option("--samples", type=click.Path(), required=True, help="Profiling samples CSV.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Fitted profile YAML.")
def calibrate_cmd(config_path, samples, out_path):
    """Fit hardware-profile parameters from profiled iteration latencies."""
    try:
        config, _ = load_config(config_path)
        sample_list, transfers = load_calibration_samples(samples, config.model)
    except (ConfigError, ValueError, OSError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        result = calibrate(
            sample_list, config.model, defaults=config.strict_hw, transfer_samples=transfers
        )
    except UnderdeterminedSamplesError as exc:
        _fail(EXIT_INFEASIBLE, str(exc))
    payload = {
        "profile": dataclasses.asdict(result.profile),
        "fit": {
            "mean_rel_error": result.mean_rel_error,
            "max_rel_error": max(result.per_sample_rel_error),
            "samples": len(result.per_sample_rel_error),
            "defaulted": result.defaulted,
        },
    }
    Path(out_path).write_text(yaml.safe_dump(payload, sort_keys=True))
    click.echo(
        f"fitted profile written to {out_path} "
        f"(mean rel error {result.mean_rel_error:.4%} over {len(sample_list)} samples)"
    )


main.add_command(calibrate_cmd, name="calibrate")


@main.command()
@click.option("--run-dir", type=click.Path(), required=True, help="Output directory of a previous run.")
def report(run_dir):
    """Print a human-readable summary of a simulate or sweep output directory."""
    run = Path(run_dir)
    summary_path = run / "summary.json"
    sweep_path = run / "sweep.csv"
    if not summary_path.exists() and not sweep_path.exists():
        _fail(EXIT_CONFIG, f"no summary.json or sweep.csv under {run}")
    if summary_path.exists():
        data = json.loads(summary_path.read_text())
        click.echo(f"run duration: {data['duration_s']:.1f}s")
        for klass in ("online", "offline"):
            k = data[klass]
            line = (
                f"{klass:8s} requests={k['requests']:6d} completed={k['completed']:6d} "
                f"violation_rate={k['violation_rate']:.4f}"
            )
            if k["ttft"].get("count"):
                line += f"  ttft p95={k['ttft']['p95'] * 1e3:9.1f} ms"
            if k["tpot"].get("count"):
                line += f"  tpot p95={k['tpot']['p95'] * 1e3:7.2f} ms"
            click.echo(line)
        c = data["counters"]
        click.echo(
            f"events: preemptions={c['preemptions']} migrations={c['migrations']} "
            f"evictions={c['evictions']}; offline goodput "
            f"{data['offline_goodput_tokens_per_s']:.1f} tok/s; in flight {data['in_flight']}"
        )
        for idx, u in sorted(data.get("utilization", {}).items()):
            click.echo(
                f"instance {idx}: mean busy {u['mean_busy_fraction']:.2%}, "
                f"peak KV {u['peak_kv_bytes'] / 1e6:.1f} MB"
            )
    if sweep_path.exists():
        click.echo(sweep_path.read_text().rstrip())


if __name__ == "__main__":
    main()
