"""Time the numba and numpy backends of the hot kernels on identical inputs.

Usage: python benchmarks/bench_kernels.py [--repeats R] [--quick]
"""
import argparse
import time

import numpy as np
from scipy.linalg import null_space

from kqbatch import _accel


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        tic = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tic)
    return min(times)


def cases(quick):
    rng = np.random.default_rng(0)
    scale = 4 if quick else 1
    N, d = 4000 // scale, 6
    A = rng.random((N, d))
    B = rng.random((500 // scale, d))
    ell = np.full(d, 0.3)
    w = rng.random(N)
    w /= w.sum()
    yield "rbf_gram", lambda impl: impl.rbf_gram(A, B, ell, 1.0)
    yield "rbf_quadform", lambda impl: impl.rbf_quadform(A, w, A, w, ell, 1.0)

    n = 64 // scale
    Phi = rng.normal(size=(2 * n, n - 1))
    V = null_space(np.vstack([np.ones(2 * n), Phi.T]))
    w0 = np.full(2 * n, 1.0 / (2 * n))
    g = rng.normal(size=2 * n)
    yield "eliminate", lambda impl: impl.eliminate(w0, np.ascontiguousarray(V), g, 1e-12)

    T0 = rng.normal(size=(102, 2100 // scale))

    def pivots(impl):
        T = T0.copy()
        for k in range(50):
            impl.pivot(T, k % T.shape[0], (7 * k) % T.shape[1])

    yield "pivot x50", pivots


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = p.parse_args(argv)
    if _accel.numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':14s} {'numpy ms':>10s} {'numba ms':>10s} {'speed-up':>9s}")
    for name, fn in cases(args.quick):
        fn(_accel.numba_impl)  # compile outside the timed region
        t_np = best_of(lambda: fn(_accel.numpy_impl), args.repeats)
        t_nb = best_of(lambda: fn(_accel.numba_impl), args.repeats)
        print(f"{name:14s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
