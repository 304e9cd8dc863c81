"""Compare the compiled kernel against the pure-Python fallback.

Usage: python benchmarks/backend_benchmark.py [--n 16384] [--reps 20]
"""

import argparse
import time

import numpy as np

import banditxd as bx


def bench(inst, cfg, reps, backend):
    start = time.perf_counter()
    for r in range(reps):
        bx.run_replication(inst, cfg, (7, 0, r), backend=backend)
    elapsed = time.perf_counter() - start
    return reps * inst.n / elapsed, elapsed


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=16384)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--python-reps", type=int, default=2, help="fallback reps (it is slow)")
    args = ap.parse_args()
    inst = bx.build_instance(
        {
            "horizon": args.n,
            "features": 2,
            "arrival": {"kind": "stationary", "p": [0.5, 0.5]},
            "rewards": [
                [{"kind": "bernoulli", "mean": 0.25}, {"kind": "bernoulli", "mean": 0.75}],
                [{"kind": "bernoulli", "mean": 0.3}, {"kind": "bernoulli", "mean": 0.8}],
            ],
        }
    )
    print(f"horizon n={args.n}, M=2, Bernoulli rewards; kernel built: {bx.kernel_available()}")
    for kind, eps in (("conse", None), ("dpconse", 1.0), ("rct", None), ("ucb", None)):
        cfg = bx.PolicyConfig(kind=kind, alpha=0.5, epsilon=eps)
        rate_py, _ = bench(inst, cfg, args.python_reps, "python")
        row = f"{kind:8s} python: {rate_py / 1e6:8.3f} M steps/s"
        if bx.kernel_available():
            rate_cy, _ = bench(inst, cfg, args.reps, "cython")
            row += f"   cython: {rate_cy / 1e6:8.1f} M steps/s   speedup: {rate_cy / rate_py:6.1f}x"
        print(row)
    if bx.kernel_available():
        cfg = bx.PolicyConfig(kind="conse", alpha=0.5)
        a = bx.run_replication(inst, cfg, (7, 0, 0), backend="python")
        b = bx.run_replication(inst, cfg, (7, 0, 0), backend="cython")
        match = a.final_regret == b.final_regret and np.array_equal(a.estimates, b.estimates)
        print(f"cross-backend trace parity on a spot check: {match}")


if __name__ == "__main__":
    main()
