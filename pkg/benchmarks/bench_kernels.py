"""Benchmark the compiled iteration-latency kernel against the pure-Python
twin, both in isolation and through a full simulation run.

Usage:
    python benchmarks/bench_kernels.py [--batch-sizes 8,64,256] [--repeats 2000]

The kernel is the hot inner loop: every decode step evaluates the predictor
a couple dozen times (candidate tests plus the binary search), so sweep
runtime tracks kernel throughput almost linearly.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def bench_kernel_calls(batch_sizes: list[int], repeats: int) -> None:
    from colosim import _kernels
    from colosim._kernels import pure

    backends = [("pure", pure.iteration_latency)]
    try:
        from colosim._kernels import _fast

        backends.append(("fast", _fast.iteration_latency))
    except ImportError:
        print("compiled kernel unavailable; benchmarking pure only")

    rng = np.random.default_rng(0)
    n_ops = 5
    kwargs = dict(
        gemm_w=rng.uniform(1, 32, n_ops),
        gemm_a=rng.uniform(1e6, 1e10, n_ops),
        gemm_b=rng.uniform(1e3, 1e6, n_ops),
        gemm_c=rng.uniform(1e6, 1e9, n_ops),
        inv_fg=1e-13,
        inv_mg=1e-12,
        attn_weight=28.0,
        attn_af=14336.0,
        attn_ab_lin=1e5,
        attn_ab_const=14336.0,
        inv_fa=1e-14,
        inv_ma=1e-12,
        comm_per_n=0.0,
        overhead=1.5e-3,
    )
    print(f"{'batch':>6}  " + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for bs in batch_sizes:
        contexts = [int(c) for c in rng.integers(64, 2048, size=bs)]
        times = []
        for _, fn in backends:
            fn(False, contexts, **kwargs)  # warm up
            t0 = time.perf_counter()
            for _ in range(repeats):
                fn(False, contexts, **kwargs)
            times.append((time.perf_counter() - t0) / repeats)
        row = f"{bs:>6}  " + "".join(f"{t * 1e6:>10.2f}us" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)


def bench_simulation() -> None:
    """Same simulation, both backends, via subprocesses (the backend is
    chosen at import time)."""
    script = (
        "import time, dataclasses, math;"
        "from colosim.presets import colocation_scenario;"
        "from colosim.workload import offline_stream;"
        "from colosim.cluster import Engine;"
        "from colosim import _kernels;"
        "config, online, pool, _ = colocation_scenario();"
        "offline = offline_stream(pool, 6.0, 0.0, math.ceil(6.0 * 540));"
        "t0 = time.perf_counter();"
        "Engine(config, online, offline).run();"
        "print(f'{_kernels.BACKEND}: {time.perf_counter() - t0:.2f}s')"
    )
    print("\nfull simulation (bundled scenario, 6 qps offline):")
    for backend in ("fast", "pure"):
        env = dict(os.environ, COLOSIM_KERNELS=backend)
        try:
            out = subprocess.run(
                [sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True
            )
            print("  " + out.stdout.strip())
        except subprocess.CalledProcessError as exc:
            print(f"  {backend}: failed ({exc.stderr.strip().splitlines()[-1]})")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch-sizes", default="1,8,64,256,1024")
    parser.add_argument("--repeats", type=int, default=2000)
    parser.add_argument("--skip-simulation", action="store_true")
    args = parser.parse_args()
    sizes = [int(x) for x in args.batch_sizes.split(",")]
    bench_kernel_calls(sizes, args.repeats)
    if not args.skip_simulation:
        bench_simulation()


if __name__ == "__main__":
    main()
