"""Compiled vs pure-Python timings for the hot kernels.

Usage: python benchmarks/bench_kernels.py [--repeat 5]

The pure path is the ``py_func`` attribute of each compiled dispatcher, so
both columns come from one process.  With NEHARI_LAB_NO_JIT=1 only the pure
column is meaningful.
"""

import argparse
import timeit

import numpy as np

from nehari_lab import _kernels as kn


def _cases():
    rng = np.random.default_rng(0)
    n = 20000
    sub, sup = rng.uniform(-1, 1, n - 1), rng.uniform(-1, 1, n - 1)
    diag = 2.5 + rng.uniform(0, 1, n)
    rhs = rng.normal(size=n)
    sdiag, soff = rng.normal(size=n), rng.normal(size=n - 1)
    nodes = np.linspace(0.05, 20.0, 400)

    def shoot(fn):
        out_u, out_v = np.empty(nodes.size), np.empty(nodes.size)
        return lambda: fn(0.43, 0.1, 2.0, 3.0, 20.0, nodes, out_u, out_v, 2, 1e-14, 1e-12, 10.0)

    return {
        "shoot_radial (p=2, omega=0.1, 400 nodes)": (kn.shoot_radial, shoot),
        "thomas_solve (n=20000)": (kn.thomas_solve, lambda fn: lambda: fn(sub, diag, sup, rhs)),
        "sturm_count (n=20000)": (kn.sturm_count, lambda fn: lambda: fn(sdiag, soff, 0.3)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"jit enabled: {kn.USE_JIT}")
    print(f"{'kernel':45s} {'jit [ms]':>10s} {'python [ms]':>12s} {'speedup':>8s}")
    for name, (kernel, make) in _cases().items():
        pure = getattr(kernel, "py_func", kernel)
        fast_call, slow_call = make(kernel), make(pure)
        fast_call()  # compile outside the timed region
        t_fast = min(timeit.repeat(fast_call, number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(slow_call, number=1, repeat=max(1, args.repeat // 2))) * 1e3
        print(f"{name:45s} {t_fast:10.3f} {t_slow:12.2f} {t_slow / t_fast:8.1f}")


if __name__ == "__main__":
    main()
