"""Time the compiled kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time through ``FKPDE_NO_NUMBA``.

    python benchmarks/bench_kernels.py [--n-fpt 20000] [--n-ea 2000] [--n-euler 200]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from fkpde import bench
from fkpde.brownian import fpt_batch
from fkpde.debias import estimate_euler
from fkpde.estimator import estimate_ea

n_fpt, n_ea, n_euler = map(int, sys.argv[1:4])
out = {}

def timed(label, fn, units):
    fn()  # warm-up (compilation for the numba backend)
    t0 = time.perf_counter()
    fn()
    dt = time.perf_counter() - t0
    out[label] = {"seconds": dt, "per_unit_us": 1e6 * dt / units}

g = np.random.default_rng(1)
ts, ss = np.empty(n_fpt), np.empty(n_fpt)
timed("fpt_unit", lambda: fpt_batch(g, 1.0, n_fpt, ts, ss), n_fpt)
pr = bench.adv_diff_1d(0.01, 0.1)
timed("ea_path_1d", lambda: estimate_ea(pr, [0.9], 5.0, n_ea, seed=1, threads=1), n_ea)
timed("euler_step_1d", lambda: estimate_euler(pr, [0.9], 5.0, 5120, n_euler, seed=1, threads=1), n_euler * 5120)
print(json.dumps(out))
"""


def run_backend(no_numba, args):
    env = dict(os.environ)
    env.pop("FKPDE_NO_NUMBA", None)
    if no_numba:
        env["FKPDE_NO_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", CHILD, str(args.n_fpt), str(args.n_ea), str(args.n_euler)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-fpt", type=int, default=20000)
    p.add_argument("--n-ea", type=int, default=2000)
    p.add_argument("--n-euler", type=int, default=200)
    args = p.parse_args(argv)
    jit = run_backend(False, args)
    py = run_backend(True, args)
    print(f"{'kernel':<16}{'numba us/unit':>16}{'numpy us/unit':>16}{'speedup':>10}")
    for k in jit:
        a, b = jit[k]["per_unit_us"], py[k]["per_unit_us"]
        print(f"{k:<16}{a:>16.3f}{b:>16.3f}{b / a:>10.1f}")


if __name__ == "__main__":
    main()
