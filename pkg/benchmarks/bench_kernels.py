"""Compare the numba and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat 50]

Times the fused Tyler scatter kernel and the subspace membership count on a
few problem sizes, then a full Wiesel solve, on every available backend.
"""

import argparse
import time

import numpy as np

from regtyler import _kernels
from regtyler.estimators import ShrinkageConfig, SolverOptions, wiesel_estimate
from regtyler.spd import random_spd


def _best(fn, repeat):
    fn()  # warm-up (numba compiles here)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = _kernels.available_backends()
    print(f"backends: {backends}")
    print(f"{'kernel':<16}{'K':>4}{'N':>6}" + "".join(f"{b:>14}" for b in backends))
    for k, n in [(10, 20), (30, 60), (45, 100)]:
        X = rng.standard_normal((n, k))
        L = np.linalg.cholesky(random_spd(k, rng).entries)
        Q, _ = np.linalg.qr(rng.standard_normal((k, k // 2)))
        norms = np.linalg.norm(X, axis=1)
        rows = {"tyler_scatter": [], "span_count": []}
        for b in backends:
            _kernels.set_backend(b)
            rows["tyler_scatter"].append(_best(lambda: _kernels.tyler_scatter(X, L), args.repeat))
            rows["span_count"].append(_best(lambda: _kernels.span_count(Q, X, norms, 1e-8), args.repeat))
        for name, times in rows.items():
            print(f"{name:<16}{k:>4}{n:>6}" + "".join(f"{t * 1e6:>12.1f}us" for t in times))
    X = rng.standard_normal((60, 30))
    cfg = ShrinkageConfig.wiesel(0.5)
    solve = []
    for b in backends:
        _kernels.set_backend(b)
        solve.append(_best(lambda: wiesel_estimate(X, cfg, SolverOptions(tol=1e-10)), max(args.repeat // 10, 3)))
    print(f"{'wiesel solve':<16}{30:>4}{60:>6}" + "".join(f"{t * 1e3:>12.2f}ms" for t in solve))


if __name__ == "__main__":
    main()
