"""Fit hardware-profile parameters from profiled iteration latencies.

The predictor is piecewise linear in the reciprocal rates once each operator's
roofline regime (compute- vs memory-limited) is fixed, so fitting alternates
between regime assignment and a non-negative least-squares solve on relative
residuals, then polishes the stated objective (mean relative error) with a few
coordinate-descent sweeps.  Interconnect bandwidth is fitted only from
explicit transfer samples; parameters never active in any regime stay at
their defaults and are reported as such.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar, nnls

from .costs import kv_cache_bytes
from .latency import _coeffs
from .types import HardwareProfile, ModelSpec, Phase

# Column order of the reciprocal-rate / overhead unknowns.
_PARAMS = (
    "gemm_flops",
    "prefill_attn_flops",
    "decode_attn_flops",
    "gemm_bandwidth",
    "attn_bandwidth",
    "prefill_overhead_s",
    "decode_overhead_s",
)
_RATE_PARAMS = _PARAMS[:5]


class UnderdeterminedSamplesError(ValueError):
    """The sample set cannot constrain the named parameters."""

    def __init__(self, parameters: Sequence[str], reason: str):
        self.parameters = list(parameters)
        super().__init__(f"under-determined calibration ({reason}); unconstrained: {', '.join(parameters)}")


@dataclass(frozen=True)
class CalibrationSample:
    phase: Phase
    context_lengths: tuple[int, ...]
    observed_seconds: float


@dataclass(frozen=True)
class TransferSample:
    tokens: int
    observed_seconds: float


@dataclass
class CalibrationResult:
    profile: HardwareProfile
    mean_rel_error: float
    per_sample_rel_error: list[float]
    defaulted: list[str]


_DEFAULTS = HardwareProfile(
    gemm_flops=1e14,
    prefill_attn_flops=1e14,
    decode_attn_flops=1e14,
    gemm_bandwidth=1e12,
    attn_bandwidth=1e12,
    prefill_overhead_s=1e-3,
    decode_overhead_s=1e-3,
    comm_bandwidth=1e10,
    kv_capacity_bytes=1 << 34,
)


def _check_preconditions(samples: Sequence[CalibrationSample]) -> None:
    missing: list[str] = []
    reasons: list[str] = []
    phases = {s.phase for s in samples}
    if not samples:
        raise UnderdeterminedSamplesError(list(_PARAMS), "no samples")
    if Phase.PREFILL not in phases:
        missing += ["prefill_attn_flops", "prefill_overhead_s"]
        reasons.append("no prefill samples")
    if Phase.DECODE not in phases:
        missing += ["decode_attn_flops", "decode_overhead_s"]
        reasons.append("no decode samples")
    if len({len(s.context_lengths) for s in samples}) < 2:
        missing += ["prefill_overhead_s", "decode_overhead_s"]
        reasons.append("fewer than 2 distinct batch sizes")
    if len(samples) < 8:
        reasons.append(f"only {len(samples)} samples (need >= 8)")
        if not missing:
            missing = list(_PARAMS)
    if reasons:
        raise UnderdeterminedSamplesError(sorted(set(missing)), "; ".join(reasons))


def _sample_ops(model: ModelSpec, sample: CalibrationSample):
    """(flops, bytes, rate-column, bw-column) rows for every operator instance."""
    co = _coeffs(model, _DEFAULTS)  # coefficient geometry is hw-independent
    prefill = sample.phase is Phase.PREFILL
    n = sum(sample.context_lengths) if prefill else len(sample.context_lengths)
    ops = []
    for i in range(len(co.gemm_w)):
        w = float(co.gemm_w[i])
        ops.append((w * co.gemm_a[i] * n, w * (co.gemm_b[i] * n + co.gemm_c[i]), 0, 3))
    layers = float(model.num_layers)
    if prefill:
        ab = co.attn_ab_group * (1 + co.group)
        for s in sample.context_lengths:
            ops.append((layers * co.attn_af * s * s, layers * ab * s, 1, 4))
    else:
        for s in sample.context_lengths:
            ops.append(
                (layers * co.attn_af * s, layers * (co.attn_ab_group + co.attn_ab_group * co.group * s), 2, 4)
            )
    return ops, n


def _predict_with(x: np.ndarray, ops, n: float, comm_per_n: float, phase: Phase) -> float:
    total = comm_per_n * n + (x[5] if phase is Phase.PREFILL else x[6])
    for fl, by, jf, jm in ops:
        total += max(fl * x[jf], by * x[jm])
    return total


def calibrate(
    samples: Sequence[CalibrationSample],
    model: ModelSpec,
    *,
    defaults: Optional[HardwareProfile] = None,
    transfer_samples: Sequence[TransferSample] = (),
    max_rounds: int = 25,
) -> CalibrationResult:
    """Recover a HardwareProfile minimizing mean relative prediction error."""
    _check_preconditions(samples)
    base = defaults or _DEFAULTS

    comm_per_n = 0.0
    if model.tp_degree > 1:
        comm_per_n = 2 * model.num_layers * model.bytes_per_value * model.hidden_dim / base.comm_bandwidth

    per_sample = [_sample_ops(model, s) for s in samples]
    obs = np.array([s.observed_seconds for s in samples])
    phases = [s.phase for s in samples]

    x = np.array(
        [
            1.0 / base.gemm_flops,
            1.0 / base.prefill_attn_flops,
            1.0 / base.decode_attn_flops,
            1.0 / base.gemm_bandwidth,
            1.0 / base.attn_bandwidth,
            base.prefill_overhead_s,
            base.decode_overhead_s,
        ]
    )

    def objective(xv: np.ndarray) -> float:
        errs = [
            abs(_predict_with(xv, ops, n, comm_per_n, ph) - o) / o
            for (ops, n), o, ph in zip(per_sample, obs, phases)
        ]
        return float(np.mean(errs))

    target = obs - comm_per_n * np.array([n for _, n in per_sample])
    weights = 1.0 / obs

    def alternate(x0: np.ndarray) -> tuple[np.ndarray, float, set[int]]:
        xc = x0.copy()
        bx, bo, bz = xc.copy(), objective(xc), set()
        prev_assign = None
        for _ in range(max_rounds):
            design = np.zeros((len(samples), 7))
            assign = []
            for i, ((ops, n), ph) in enumerate(zip(per_sample, phases)):
                design[i, 5 if ph is Phase.PREFILL else 6] = 1.0
                for fl, by, jf, jm in ops:
                    compute_bound = fl * xc[jf] >= by * xc[jm]
                    assign.append(compute_bound)
                    if compute_bound:
                        design[i, jf] += fl
                    else:
                        design[i, jm] += by
            sol, _ = nnls(design * weights[:, None], target * weights)
            zc = {j for j in range(7) if not design[:, j].any()}
            for j in zc:
                sol[j] = xc[j]
            new_obj = objective(sol)
            if new_obj < bo:
                bo, bx, bz = new_obj, sol.copy(), zc
            if assign == prev_assign:
                break
            prev_assign = assign
            xc = sol
        return bx, bo, bz

    # Multi-start: the regime-assignment fixpoint depends on the initial
    # guess.  Seed GEMM rate ratios that place the roofline ridge at a range
    # of input sizes, plus memory- and compute-dominant extremes.
    starts = [x.copy()]
    co = _coeffs(model, _DEFAULTS)
    agg_a = float(np.sum(co.gemm_w * co.gemm_a))
    agg_b = float(np.sum(co.gemm_w * co.gemm_b))
    agg_c = float(np.sum(co.gemm_w * co.gemm_c))
    for ridge_n in (1, 8, 32, 128, 512, 2048, 8192):
        seeded = x.copy()
        seeded[0] = (agg_b * ridge_n + agg_c) / (agg_a * ridge_n) * seeded[3]
        starts.append(seeded)
    mem_first = x.copy()
    mem_first[:3] *= 1e-6
    starts.append(mem_first)
    comp_first = x.copy()
    comp_first[3:5] *= 1e-6
    starts.append(comp_first)
    best_x, best_obj, zero_cols = alternate(starts[0])
    for x0 in starts[1:]:
        if best_obj < 1e-12:
            break
        bx, bo, bz = alternate(x0)
        if bo < best_obj:
            best_x, best_obj, zero_cols = bx, bo, bz

    # Polish the mean-|relative-error| objective coordinate-wise.
    x = best_x.copy()
    for _ in range(2):
        for j in range(7):
            if j in zero_cols or x[j] == 0:
                continue
            lo, hi = x[j] / 16.0, x[j] * 16.0

            def f(v: float, j: int = j) -> float:
                xv = x.copy()
                xv[j] = v
                return objective(xv)

            res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": x[j] * 1e-6})
            if res.fun < objective(x):
                x[j] = res.x
    if objective(x) < best_obj:
        best_obj, best_x = objective(x), x

    defaulted = sorted(_PARAMS[j] for j in zero_cols)
    vals = {}
    for j, name in enumerate(_PARAMS):
        if name in _RATE_PARAMS:
            vals[name] = float(
                getattr(base, name) if j in zero_cols or best_x[j] <= 0 else 1.0 / best_x[j]
            )
        else:
            vals[name] = float(getattr(base, name) if j in zero_cols else best_x[j])

    comm_bandwidth = base.comm_bandwidth
    if transfer_samples:
        b = np.array([kv_cache_bytes(model, t.tokens) for t in transfer_samples], dtype=float)
        t = np.array([t.observed_seconds for t in transfer_samples])
        inv = float(np.sum(b / t) / np.sum((b / t) ** 2) if np.any(b) else 0.0)
        if inv > 0:
            comm_bandwidth = 1.0 / inv
    else:
        defaulted.append("comm_bandwidth")

    profile = replace(
        base,
        gemm_flops=vals["gemm_flops"],
        prefill_attn_flops=vals["prefill_attn_flops"],
        decode_attn_flops=vals["decode_attn_flops"],
        gemm_bandwidth=vals["gemm_bandwidth"],
        attn_bandwidth=vals["attn_bandwidth"],
        prefill_overhead_s=max(0.0, vals["prefill_overhead_s"]),
        decode_overhead_s=max(0.0, vals["decode_overhead_s"]),
        comm_bandwidth=comm_bandwidth,
    )
    errs = []
    xf = np.array(
        [
            1.0 / profile.gemm_flops,
            1.0 / profile.prefill_attn_flops,
            1.0 / profile.decode_attn_flops,
            1.0 / profile.gemm_bandwidth,
            1.0 / profile.attn_bandwidth,
            profile.prefill_overhead_s,
            profile.decode_overhead_s,
        ]
    )
    for (ops, n), o, ph in zip(per_sample, obs, phases):
        errs.append(abs(_predict_with(xf, ops, n, comm_per_n, ph) - o) / o)
    return CalibrationResult(
        profile=profile,
        mean_rel_error=float(np.mean(errs)),
        per_sample_rel_error=[float(e) for e in errs],
        defaulted=defaulted,
    )


def load_calibration_samples(
    path: str | Path, model: ModelSpec
) -> tuple[list[CalibrationSample], list[TransferSample]]:
    """Read the calibration CSV: phase, batch_size, context_lengths
    (semicolon-separated), observed_seconds.  Rows with phase ``transfer``
    carry a single token count and feed the interconnect-bandwidth fit.
    """
    samples: list[CalibrationSample] = []
    transfers: list[TransferSample] = []
    with Path(path).open(newline="") as f:
        reader = csv.DictReader(f)
        for line_no, row in enumerate(reader, start=2):
            try:
                phase = row["phase"].strip().lower()
                contexts = tuple(int(v) for v in row["context_lengths"].split(";") if v.strip())
                observed = float(row["observed_seconds"])
                if observed <= 0:
                    raise ValueError("observed_seconds must be positive")
                if phase == "transfer":
                    transfers.append(TransferSample(tokens=contexts[0], observed_seconds=observed))
                    continue
                batch_size = int(row["batch_size"])
                if batch_size != len(contexts):
                    raise ValueError(
                        f"batch_size {batch_size} != {len(contexts)} context lengths"
                    )
                samples.append(
                    CalibrationSample(
                        phase=Phase.PREFILL if phase == "prefill" else Phase.DECODE,
                        context_lengths=contexts,
                        observed_seconds=observed,
                    )
                )
            except (KeyError, ValueError, IndexError) as exc:
                raise ValueError(f"calibration CSV line {line_no}: {exc}") from exc
    return samples, transfers
