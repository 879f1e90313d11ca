"""Compare the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--no-end-to-end]

Prints per-call times for each hot kernel under both backends and, unless
disabled, whole-episode timings for an EKF run and a short DDPG training run
(each backend in its own subprocess so import-time selection is exercised).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from beamtrack import _pykernels

try:
    from beamtrack import _ckernels
except ImportError:
    _ckernels = None


def kernel_cases(rng):
    delta = rng.uniform(-2, 2, 1000)
    g = rng.standard_normal(3)
    cos = rng.uniform(-1, 1, 3)
    w = rng.random(1000)
    w /= w.sum()
    hr, hi = rng.standard_normal(1000), rng.standard_normal(1000)
    p, gr = rng.standard_normal((200, 200)), rng.standard_normal((200, 200))
    m, v = np.zeros_like(p), np.ones_like(p)
    return {
        "dirichlet (scalar)": lambda k: k.dirichlet(0.37, 16, 0.5),
        "dirichlet_array (1000)": lambda k: k.dirichlet_array(delta, 16, 0.5),
        "path_response (3 paths)": lambda k: k.path_response(g, g, cos, cos, 0.1, -0.1, 16, 16, 0.5),
        "systematic_resample (1000)": lambda k: k.systematic_resample(w, 0.3),
        "gaussian_logweights (1000)": lambda k: k.gaussian_logweights(hr, hi, 0.1, 0.2, 0.01),
        "adam_step (200x200)": lambda k: k.adam_step(p, gr, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.5, 0.5, -1.0),
        "polyak (200x200)": lambda k: k.polyak(p, gr, 0.01),
    }


def time_call(fn, repeat):
    timer = timeit.Timer(fn)
    n, _ = timer.autorange()
    return min(timer.repeat(repeat, n)) / n


END_TO_END = """
import time, numpy as np
from beamtrack import harness, kernels, rl
from beamtrack.trackers import run_tracked_episode
spec = harness.ExperimentSpec()
sc = spec.scenario_config()
t = time.perf_counter()
run_tracked_episode("ekf", sc, spec.channel(sc), 0.1, spec.tracker_params(), np.random.default_rng(0))
ekf = time.perf_counter() - t
t = time.perf_counter()
run_tracked_episode("pf", sc, spec.channel(sc), 0.1, spec.tracker_params(), np.random.default_rng(0))
pf = time.perf_counter() - t
cfg = spec.with_values(experiment__episodes=5).agent_config()
t = time.perf_counter()
rl.train(cfg, sc, spec.channel(sc), np.random.default_rng(0), spec.env_params())
ddpg = (time.perf_counter() - t) / 5
print(kernels.BACKEND, ekf, pf, ddpg)
"""


def end_to_end():
    out = {}
    for pure in ("0", "1"):
        env = dict(os.environ, BEAMTRACK_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", END_TO_END], env=env,
                             capture_output=True, text=True, check=True)
        name, *vals = res.stdout.split()
        out[name] = [float(x) for x in vals]
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':30s} {'python (us)':>12s} {'cython (us)':>12s} {'speedup':>8s}")
    for name, fn in cases.items():
        t_py = time_call(lambda: fn(_pykernels), args.repeat) * 1e6
        if _ckernels is None:
            print(f"{name:30s} {t_py:12.2f} {'n/a':>12s}")
            continue
        t_c = time_call(lambda: fn(_ckernels), args.repeat) * 1e6
        print(f"{name:30s} {t_py:12.2f} {t_c:12.2f} {t_py / t_c:7.1f}x")

    if args.no_end_to_end:
        return 0
    res = end_to_end()
    print()
    print(f"{'episode (default scenario)':30s} " + " ".join(f"{b + ' (s)':>12s}" for b in res))
    for i, label in enumerate(("EKF episode", "PF episode", "DDPG training episode")):
        print(f"{label:30s} " + " ".join(f"{res[b][i]:12.3f}" for b in res))
    return 0


if __name__ == "__main__":
    sys.exit(main())
