"""Benchmark the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--quick]

Times the two hot kernels (assignment, penalized-gradient field) on
synthetic workloads of increasing size, plus one end-to-end engine run
under each implementation, and prints a speedup table. Both paths are
bitwise-equivalent; this is purely a performance comparison.
"""

import argparse
import time

import numpy as np

from peerclust import _kernels, _kernels_py
from peerclust.rng import stream


def make_workload(m, k_count, d, n_per_user, seed=0):
    rng = stream(seed, "bench_workload")
    centers = rng.normal(size=(m, k_count, d))
    offsets = np.arange(m + 1, dtype=np.int64) * n_per_user
    n = int(offsets[-1])
    points = np.ascontiguousarray(rng.normal(size=(n, d)) * 2)
    weights = np.full(n, 1.0 / n)
    labels = rng.integers(0, k_count, n).astype(np.int32)
    indptr = np.arange(m + 1, dtype=np.int64) * 2  # ring
    indices = np.array([j for i in range(m) for j in sorted(((i - 1) % m, (i + 1) % m))],
                       dtype=np.int64)
    return centers, points, weights, labels, offsets, indptr, indices


def time_call(fn, *args, repeats=5):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(quick):
    sizes = [(10, 3, 4, 15), (10, 4, 2, 500), (20, 8, 16, 250)]
    if quick:
        sizes = sizes[:2]
    print(f"{'workload':>28} {'kernel':>12} {'cython':>10} {'python':>10} {'speedup':>8}")
    for m, k_count, d, n_per in sizes:
        centers, points, weights, labels, offsets, indptr, indices = \
            make_workload(m, k_count, d, n_per)
        grad = np.empty_like(centers)
        label_buf = np.empty(len(labels), dtype=np.int32)
        name = f"m={m} K={k_count} d={d} N={m * n_per}"

        t_c = time_call(_kernels.assign_clusters, centers, points, offsets, None,
                        label_buf, 0, m)
        t_p = time_call(_kernels_py.assign_clusters, centers, points, offsets, None,
                        label_buf, 0, m, repeats=2)
        print(f"{name:>28} {'assign':>12} {t_c * 1e3:9.3f}ms {t_p * 1e3:9.3f}ms "
              f"{t_p / t_c:7.1f}x")

        t_c = time_call(_kernels.grad_field, centers, indptr, indices, points,
                        weights, labels, offsets, 0, 1.0, 0.1, None, grad, 0, m)
        t_p = time_call(_kernels_py.grad_field, centers, indptr, indices, points,
                        weights, labels, offsets, 0, 1.0, 0.1, None, grad, 0, m,
                        repeats=2)
        print(f"{name:>28} {'grad_field':>12} {t_c * 1e3:9.3f}ms {t_p * 1e3:9.3f}ms "
              f"{t_p / t_c:7.1f}x")


def bench_end_to_end(quick):
    import os
    import subprocess
    import sys

    t_rounds = 100 if quick else 300
    code = f"""
import time
import numpy as np
import peerclust as pc
ds = pc.generate_gaussian_mixture(3, 100, np.array([[0.,0.],[4.,0.],[0.,4.]]), 0.6, seed=3)
sh = pc.partition(ds, 10, pc.PartitionSpec(scheme="homogeneous", seed=3))
g = pc.build_graph(pc.TopologySpec(kind="ring", m=10))
cfg = pc.RunConfig(K=3, T={t_rounds}, loss=pc.LossSpec(kind="huber", delta=5.0),
                   rho=10.0, B=2, init=pc.InitSpec(scheme="warm_start_per_class"), seed=3)
t0 = time.perf_counter()
tr = pc.run(g, sh, cfg)
print(pc.KERNEL_IMPLEMENTATION, time.perf_counter() - t0, float(tr.J_rho[-1]))
"""
    results = {}
    for pure in ("0", "1"):
        env = dict(os.environ, PEERCLUST_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        impl, elapsed, final_cost = out.stdout.split()
        results[impl] = (float(elapsed), float(final_cost))
    t_cy, cost_cy = results["cython"]
    t_py, cost_py = results["python"]
    print(f"\nend-to-end run ({t_rounds} rounds, m=10, N=300, B=2, huber):")
    print(f"  cython {t_cy:8.3f}s   python {t_py:8.3f}s   speedup {t_py / t_cy:6.1f}x")
    print(f"  final J_rho agreement: {cost_cy!r} vs {cost_py!r} "
          f"({'identical' if cost_cy == cost_py else 'DIFFERS'})")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller workloads")
    args = parser.parse_args()
    bench_kernels(args.quick)
    bench_end_to_end(args.quick)


if __name__ == "__main__":
    main()
