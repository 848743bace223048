"""CLI surface: subcommands, exit codes, and reproducibility."""

from __future__ import annotations

import json

import pytest
import yaml
from click.testing import CliRunner

from colosim.cli import main
from colosim.configio import default_config_yaml
from colosim.presets import offline_length_pool, poisson_trace
from colosim.workload import offline_stream, save_trace


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workspace(tmp_path):
    (tmp_path / "config.yaml").write_text(default_config_yaml())
    save_trace(
        poisson_trace(duration_s=20, qps=1.0, prompt_len=300, output_len=20, seed=2, id_prefix="on"),
        tmp_path / "online.csv",
    )
    save_trace(
        offline_stream(offline_length_pool(count=16, mean_prompt=500, mean_output=60, seed=3), 1.0, 0.0, 12),
        tmp_path / "offline.csv",
    )
    return tmp_path


class TestSimulate:
    def test_minimal_run(self, runner, workspace):
        result = runner.invoke(
            main,
            [
                "simulate", "--config", str(workspace / "config.yaml"),
                "--online-trace", str(workspace / "online.csv"),
                "--offline-trace", str(workspace / "offline.csv"),
                "--out", str(workspace / "run"),
            ],
        )
        assert result.exit_code == 0, result.output
        for name in ("per_request.csv", "summary.json", "utilization.csv", "manifest.json"):
            assert (workspace / "run" / name).exists()

    def test_unknown_policy_is_config_error(self, runner, workspace):
        cfg = yaml.safe_load((workspace / "config.yaml").read_text())
        cfg["policy"]["name"] = "unknown"
        (workspace / "bad.yaml").write_text(yaml.safe_dump(cfg))
        result = runner.invoke(
            main,
            [
                "simulate", "--config", str(workspace / "bad.yaml"),
                "--online-trace", str(workspace / "online.csv"),
                "--out", str(workspace / "run"),
            ],
        )
        assert result.exit_code == 2
        assert "policy" in result.output

    def test_unknown_key_is_named(self, runner, workspace):
        cfg = yaml.safe_load((workspace / "config.yaml").read_text())
        cfg["slo"]["nonsense_field"] = 1
        (workspace / "bad.yaml").write_text(yaml.safe_dump(cfg))
        result = runner.invoke(
            main,
            [
                "simulate", "--config", str(workspace / "bad.yaml"),
                "--online-trace", str(workspace / "online.csv"),
                "--out", str(workspace / "run"),
            ],
        )
        assert result.exit_code == 2
        assert "nonsense_field" in result.output

    def test_infeasible_is_exit_3(self, runner, workspace, tmp_path):
        cfg = yaml.safe_load((workspace / "config.yaml").read_text())
        cfg["hardware"]["relaxed"]["kv_capacity_bytes"] = 1 << 18
        cfg["hardware"]["strict"]["kv_capacity_bytes"] = 1 << 18
        (workspace / "tiny.yaml").write_text(yaml.safe_dump(cfg))
        result = runner.invoke(
            main,
            [
                "simulate", "--config", str(workspace / "tiny.yaml"),
                "--online-trace", str(workspace / "online.csv"),
                "--out", str(workspace / "run"),
            ],
        )
        assert result.exit_code == 3

    def test_manifest_rerun_byte_identical(self, runner, workspace):
        args = [
            "simulate", "--config", str(workspace / "config.yaml"),
            "--online-trace", str(workspace / "online.csv"),
            "--offline-trace", str(workspace / "offline.csv"),
            "--verbose-events",
        ]
        assert runner.invoke(main, args + ["--out", str(workspace / "r1")]).exit_code == 0
        rerun = runner.invoke(
            main,
            [
                "simulate", "--from-manifest", str(workspace / "r1" / "manifest.json"),
                "--out", str(workspace / "r2"), "--verbose-events",
            ],
        )
        assert rerun.exit_code == 0, rerun.output
        for name in ("per_request.csv", "summary.json", "utilization.csv", "events.jsonl", "manifest.json"):
            assert (workspace / "r1" / name).read_bytes() == (workspace / "r2" / name).read_bytes()

    def test_seed_env_fallback(self, runner, workspace):
        result = runner.invoke(
            main,
            [
                "simulate", "--config", str(workspace / "config.yaml"),
                "--online-trace", str(workspace / "online.csv"),
                "--out", str(workspace / "run_env"),
            ],
            env={"COLOSIM_SEED": "4242"},
        )
        assert result.exit_code == 0
        manifest = json.loads((workspace / "run_env" / "manifest.json").read_text())
        assert manifest["seed"] == 4242


class TestSweepCommand:
    def test_small_sweep(self, runner, workspace):
        result = runner.invoke(
            main,
            [
                "sweep", "--config", str(workspace / "config.yaml"),
                "--online-trace", str(workspace / "online.csv"),
                "--offline-trace", str(workspace / "offline.csv"),
                "--out", str(workspace / "sw"),
                "--qps-grid", "0.5,1.0", "--bisect-iters", "0",
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (workspace / "sw" / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == "offline_qps,online_violation_rate,offline_goodput_tokens_per_s"
        assert len(lines) == 4  # header + qps 0, 0.5, 1.0
        assert "max effective offline qps" in result.output


class TestScaleTrace:
    def test_up_and_histogram(self, runner, workspace):
        result = runner.invoke(
            main,
            [
                "scale-trace", "--input", str(workspace / "online.csv"),
                "--output", str(workspace / "scaled.csv"),
                "--mode", "up", "--factor", "2.0", "--seed", "7",
                "--histogram", str(workspace / "hist.csv"), "--bucket-seconds", "5",
            ],
        )
        assert result.exit_code == 0, result.output
        assert (workspace / "scaled.csv").exists()
        hist = (workspace / "hist.csv").read_text().splitlines()
        assert hist[0] == "bucket_start,count"

    def test_down_requires_ratio(self, runner, workspace):
        result = runner.invoke(
            main,
            [
                "scale-trace", "--input", str(workspace / "online.csv"),
                "--output", str(workspace / "s.csv"), "--mode", "down",
            ],
        )
        assert result.exit_code == 2

    def test_down_identity(self, runner, workspace):
        result = runner.invoke(
            main,
            [
                "scale-trace", "--input", str(workspace / "online.csv"),
                "--output", str(workspace / "same.csv"),
                "--mode", "down", "--ratio", "1.0", "--seed", "1",
            ],
        )
        assert result.exit_code == 0
        from colosim.workload import load_trace

        a = load_trace(workspace / "online.csv")
        b = load_trace(workspace / "same.csv")
        assert [(r.id, r.arrival_ts) for r in a] == [(r.id, r.arrival_ts) for r in b]


class TestCalibrateCommand:
    def test_roundtrip_via_cli(self, runner, workspace, model_7b, reference_profile):
        import csv

        from test_calibrate import build_samples

        samples = build_samples(model_7b, reference_profile)
        path = workspace / "samples.csv"
        with path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["phase", "batch_size", "context_lengths", "observed_seconds"])
            for s in samples:
                w.writerow(
                    [s.phase.value, len(s.context_lengths),
                     ";".join(str(c) for c in s.context_lengths), repr(s.observed_seconds)]
                )
        cfg = yaml.safe_load(default_config_yaml())
        from dataclasses import asdict

        cfg["model"] = asdict(model_7b)
        (workspace / "cfg7b.yaml").write_text(yaml.safe_dump(cfg))
        result = runner.invoke(
            main,
            [
                "calibrate", "--config", str(workspace / "cfg7b.yaml"),
                "--samples", str(path), "--out", str(workspace / "profile.yaml"),
            ],
        )
        assert result.exit_code == 0, result.output
        fitted = yaml.safe_load((workspace / "profile.yaml").read_text())
        assert fitted["fit"]["max_rel_error"] < 0.01

    def test_underdetermined_exit_3(self, runner, workspace):
        path = workspace / "samples.csv"
        path.write_text("phase,batch_size,context_lengths,observed_seconds\nprefill,1,128,0.01\n")
        result = runner.invoke(
            main,
            [
                "calibrate", "--config", str(workspace / "config.yaml"),
                "--samples", str(path), "--out", str(workspace / "p.yaml"),
            ],
        )
        assert result.exit_code == 3
        assert "under-determined" in result.output


class TestReport:
    def test_reports_summary(self, runner, workspace):
        assert (
            runner.invoke(
                main,
                [
                    "simulate", "--config", str(workspace / "config.yaml"),
                    "--online-trace", str(workspace / "online.csv"),
                    "--out", str(workspace / "run"),
                ],
            ).exit_code
            == 0
        )
        result = runner.invoke(main, ["report", "--run-dir", str(workspace / "run")])
        assert result.exit_code == 0
        assert "violation_rate" in result.output

    def test_missing_dir_is_config_error(self, runner, tmp_path):
        result = runner.invoke(main, ["report", "--run-dir", str(tmp_path / "nope")])
        assert result.exit_code == 2
