"""Time the numba and numpy kernels side by side.

    python benchmarks/bench_kernels.py            # kernels only
    python benchmarks/bench_kernels.py --stages   # also profile + fit per backend

Kernel timings call both implementations directly, so the backend
environment variable does not matter for them. ``--stages`` runs the
profiling and a small fit in a subprocess per backend, because the
backend is fixed at import time.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mrenet import kernels
from mrenet.profile import speed_grid

STAGE_SCRIPT = """
import io, time
from mrenet.gps_ingest import ingest
from mrenet.multires import TuningGrid
from mrenet.pipeline import fit_stage, profile_stage
from mrenet.profile import read_period_windows
from mrenet.study import read_field_tests, read_lab_results
from mrenet.synth import SynthConfig, generate

study = generate(SynthConfig(seed=1))
sessions = ingest(io.StringIO(study.gps_csv))
windows = read_period_windows(io.StringIO(study.periods_csv))
profile_stage(sessions[:2], windows)  # warm-up / compile
t = time.perf_counter()
stage = profile_stage(sessions, windows)
t_profile = time.perf_counter() - t
t = time.perf_counter()
fit_stage(read_field_tests(io.StringIO(study.field_tests_csv)), read_lab_results(io.StringIO(study.lab_csv)),
          stage.periods, stage.uninformative, resolutions=[25], repeats=2)
print(f"{t_profile:.3f} {time.perf_counter() - t:.3f}")
"""


def best_of(fn, repeat: int) -> float:
    fn()  # compile / warm caches
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_cases(rng):
    grid = speed_grid()
    n = 720  # an hour at 5 s sampling
    dt = np.full(n, 5.0)
    speeds = rng.uniform(0, 7, n)
    yield "profile_accumulate (720 records x 1301 grid)", (
        lambda: kernels.profile_accumulate_numba(dt, speeds, grid),
        lambda: kernels.profile_accumulate_numpy(dt, speeds, grid),
    )

    y = np.sort(rng.uniform(0, 3600, grid.size))[::-1] + rng.normal(0, 50, grid.size)
    w = np.ones_like(y)
    yield "pava_decreasing (1301 points)", (
        lambda: kernels.pava_decreasing_numba(y, w),
        lambda: kernels.pava_decreasing_numpy(y, w),
    )

    for p in (35, 135):
        X = rng.normal(size=(120, p))
        X /= np.linalg.norm(X, axis=0)
        yv = X[:, :5] @ rng.normal(size=5) + 0.1 * rng.normal(size=120)
        gram, corr = X.T @ X, X.T @ yv
        lam1 = 0.1 * 2 * np.max(np.abs(corr))
        beta0 = np.zeros(p)
        yield f"coordinate_descent (p={p}, 50 sweeps)", (
            lambda g=gram, c=corr, l=lam1, b=beta0: kernels.coordinate_descent_numba(g, c, l, 0.1, b, 0.0, 50),
            lambda g=gram, c=corr, l=lam1, b=beta0: kernels.coordinate_descent_numpy(g, c, l, 0.1, b, 0.0, 50),
        )


def run_stages(backend: str) -> tuple[float, float]:
    env = dict(os.environ, MRENET_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", STAGE_SCRIPT], env=env, capture_output=True, text=True, check=True)
    a, b = out.stdout.split()
    return float(a), float(b)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--stages", action="store_true", help="also time profiling and a small fit per backend")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<46} {'numba':>12} {'numpy':>12} {'speed-up':>9}")
    for name, (fast, slow) in kernel_cases(rng):
        a, b = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:<46} {a * 1e6:>10.1f}us {b * 1e6:>10.1f}us {b / a:>8.1f}x")

    if args.stages:
        print()
        print(f"{'stage (default synthetic study)':<46} {'numba':>12} {'numpy':>12}")
        nb, npy = run_stages("numba"), run_stages("numpy")
        print(f"{'profile 1301-point grid':<46} {nb[0]:>11.2f}s {npy[0]:>11.2f}s")
        print(f"{'fit G=25, 10-fold x 2':<46} {nb[1]:>11.2f}s {npy[1]:>11.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
