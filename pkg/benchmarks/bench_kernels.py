"""Benchmark the numba loop kernels against their pure-numpy fallbacks.

Both flavors are always importable (the loop versions are njit-decorated
whenever numba is present, regardless of the INVATTN_NUMBA dispatch flag),
so one process can time both sides. Also times an end-to-end inversion
roundtrip, which is matmul/exp-bound and therefore identical on both paths.

Run: python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from invattn._backend import HAVE_NUMBA, NUMBA_ENABLED
from invattn.attention import build_block
from invattn.inversion import InversionConfig, roundtrip_check
from invattn.kernels import (
    jacobi_eigvals_loops,
    jacobi_eigvals_numpy,
    lu_logabsdet_loops,
    lu_logabsdet_numpy,
    ssim_mean_loops,
    ssim_mean_numpy,
)


def timeit(fn, *args, repeat=5):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def row(label, numpy_s, numba_s):
    if numba_s is None:
        print(f"{label:<28} numpy {numpy_s * 1e3:9.3f} ms   numba       n/a")
    else:
        print(
            f"{label:<28} numpy {numpy_s * 1e3:9.3f} ms   numba {numba_s * 1e3:9.3f} ms"
            f"   speedup {numpy_s / numba_s:6.2f}x"
        )


def main():
    print(f"numba available: {HAVE_NUMBA}; library dispatch: "
          f"{'numba' if NUMBA_ENABLED else 'numpy'}")
    rng = np.random.default_rng(0)

    if HAVE_NUMBA:  # trigger compilation outside the timed region
        warm = rng.standard_normal((4, 4))
        jacobi_eigvals_loops(warm @ warm.T)
        lu_logabsdet_loops(warm)
        img = np.ascontiguousarray(rng.uniform(0, 255, (1, 9, 9)))
        ssim_mean_loops(img, img, 8, 6.5025, 58.5225)

    for n in (16, 32, 64):
        a = rng.standard_normal((n, n))
        sym = np.ascontiguousarray(a @ a.T)
        row(
            f"jacobi eigvals {n}x{n}",
            timeit(jacobi_eigvals_numpy, sym),
            timeit(jacobi_eigvals_loops, sym) if HAVE_NUMBA else None,
        )

    for n in (64, 128, 256):
        m = np.ascontiguousarray(rng.standard_normal((n, n)))
        row(
            f"lu logabsdet {n}x{n}",
            timeit(lu_logabsdet_numpy, m),
            timeit(lu_logabsdet_loops, m) if HAVE_NUMBA else None,
        )

    c1, c2 = (0.01 * 255.0) ** 2, (0.03 * 255.0) ** 2
    for side in (32, 64):
        x = np.ascontiguousarray(rng.uniform(0, 255, (3, side, side)))
        y = np.ascontiguousarray(np.clip(x + rng.normal(0, 12, x.shape), 0, 255))
        row(
            f"ssim mean 3x{side}x{side}",
            timeit(ssim_mean_numpy, x, y, 8, c1, c2),
            timeit(ssim_mean_loops, x, y, 8, c1, c2) if HAVE_NUMBA else None,
        )

    print()
    cfg = InversionConfig(max_iters=100, early_stop_tol=1e-10)
    for kind in ("gaussian", "embedded", "dot", "concat"):
        block = build_block(kind, "invertible", 3, seed=1)
        x = rng.uniform(0, 1, (3, 16, 16))
        elapsed = timeit(lambda: roundtrip_check(x, block, cfg), repeat=3)
        print(f"roundtrip 16x16x3 {kind:<9} {elapsed * 1e3:9.3f} ms (matmul-bound, path-independent)")


if __name__ == "__main__":
    main()
