"""Time each kernel under numba and numpy, then an end-to-end training run.

    python benchmarks/bench_kernels.py [--repeat 200] [--steps 3000]

The end-to-end part runs a subprocess per backend since the flag is read at
import time.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from smdpcache import kernels


def inputs(rng, n_files=50, buffer=10_000):
    dim = 7 * n_files + 1
    present = rng.random(n_files) < 0.5
    return {
        "utilities": (12.0, present, rng.uniform(0, 10, n_files), rng.uniform(10, 30, n_files),
                      rng.uniform(0.1, 0.9, n_files), 1.0),
        "select_victims": (present, rng.random(n_files), rng.uniform(100, 1000, n_files), 10_000.0, 900.0),
        "encode_state": (0.3, present, rng.random(n_files), rng.integers(0, 9, n_files).astype(float),
                         rng.random(n_files), rng.uniform(10, 30, n_files), rng.uniform(100, 1000, n_files),
                         3, 100.0, 30.0, 1000.0),
        "attention": (rng.random((buffer, dim)), rng.random(dim), 0.4, 1.0),
        "draw_indices": (rng.random(buffer), rng.random(64)),
        "n_step_targets": (rng.normal(size=(64, 5)), rng.exponential(1.0, (64, 5)),
                           np.full(64, 5, dtype=np.int64), rng.normal(size=64), 0.99, True),
    }


def best_of(fn, args, repeat):
    fn(*args)  # warm-up / compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def end_to_end(backend, steps):
    code = (
        "import time;from smdpcache.workload import generate_catalog;"
        "from smdpcache.env import CachingEnv;from smdpcache.ppo import train, PpoConfig;"
        "env=CachingEnv(generate_catalog(50,seed=0),10000,0.2,seed=1);"
        f"train(env,PpoConfig(),200,seed=0);env=CachingEnv(generate_catalog(50,seed=0),10000,0.2,seed=1);"
        f"t=time.perf_counter();train(env,PpoConfig(),{steps},seed=0);print(time.perf_counter()-t)"
    )
    env = dict(os.environ, SMDPCACHE_NUMBA="1" if backend == "numba" else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--steps", type=int, default=3000)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, a in inputs(rng).items():
        jit = best_of(kernels.numba_kernel(name), a, args.repeat)
        ref = best_of(kernels.NUMPY_KERNELS[name], a, args.repeat)
        print(f"{name:<16}{jit * 1e6:>12.1f}{ref * 1e6:>12.1f}{ref / jit:>10.2f}")

    if args.steps:
        nb, npy = end_to_end("numba", args.steps), end_to_end("numpy", args.steps)
        print(f"\ntraining {args.steps} steps (F=50): numba {nb:.2f}s  numpy {npy:.2f}s  ratio {npy / nb:.2f}")


if __name__ == "__main__":
    main()
