#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

The backend is fixed at import time, so each one runs in its own interpreter.
Writes ``bench_backends.csv`` (one row per backend and case) next to
``--out`` and prints a speedup table.

    python3 benchmarks/bench_backends.py --repeats 5
"""

import argparse
import csv
import json
import os
import subprocess
import sys
from pathlib import Path

WORKER = r"""
import json, sys, time
import numpy as np
from riskmmd import BACKEND
from riskmmd.reduced_set import DistillConfig, distill, distill_many
from riskmmd.vehicle import VehicleParams, NoiseModel, ControlSequence, simulate
from riskmmd.risk import constraint_h_batch
from riskmmd.optimizer import OptimizerConfig, optimize
from riskmmd.scenarios import random_static_scene

repeats = int(sys.argv[1])
rng = np.random.default_rng(0)
p = VehicleParams()
x0, scene = random_static_scene(0)
O16 = rng.normal(size=(16, 80))
Ob = rng.normal(size=(100, 16, 80))
X0 = np.tile(x0.as_array(), (10000, 1))
A = 0.1 * rng.normal(size=(10000, p.horizon))
TH = 0.02 * rng.normal(size=(10000, p.horizon))
states = simulate(X0, A, TH, p)
nm = NoiseModel("gaussian", 0.1, 0.001, 0.1, 0.001)
cases = {
    "distill_16_to_4": lambda: distill(O16, 4, DistillConfig(seed=1)),
    "distill_batch_100x16": lambda: distill_many(Ob, 4, DistillConfig(cem_samples=32, cem_iters=4),
                                                 np.random.default_rng(1)),
    "rollout_10000x40": lambda: simulate(X0, A, TH, p),
    "constraint_h_10000": lambda: constraint_h_batch(states, scene, True),
    "optimize_mmd_N4_3it": lambda: optimize(x0, scene, nm, p, OptimizerConfig(N=4, iters=3), 0),
}
out = []
for name, fn in cases.items():
    fn()  # warm-up, includes JIT compilation for numba
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    times = np.array(times)
    out.append({"backend": BACKEND, "case": name, "mean_s": times.mean(),
                "std_s": times.std(), "min_s": times.min()})
print(json.dumps(out))
"""


def run_backend(disable_numba, repeats):
    env = dict(os.environ, RISKMMD_DISABLE_NUMBA="1" if disable_numba else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeats)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--out", default="bench_backends.csv")
    args = ap.parse_args(argv)

    rows = run_backend(False, args.repeats) + run_backend(True, args.repeats)
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["backend", "case", "mean_s", "std_s", "min_s"])
        w.writeheader()
        w.writerows(rows)

    by = {(r["backend"], r["case"]): r for r in rows}
    cases = [r["case"] for r in rows if r["backend"] == rows[0]["backend"]]
    print(f"{'case':<24}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for c in cases:
        nb = by.get(("numba", c))
        npy = by.get(("numpy", c))
        if nb is None or npy is None:
            continue
        print(f"{c:<24}{1e3 * nb['mean_s']:>12.2f}{1e3 * npy['mean_s']:>12.2f}"
              f"{npy['mean_s'] / nb['mean_s']:>10.1f}x")
    print(f"wrote {Path(args.out).resolve()}")


if __name__ == "__main__":
    main()
