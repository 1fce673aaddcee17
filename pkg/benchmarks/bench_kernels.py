"""Compare the numba and pure-numpy Jacobi sweep kernels.

    python benchmarks/bench_kernels.py [--sizes 32 64 128 360] [--repeat 3]

Both paths are checked for bit-identical eigenpairs before timing.  The
per-frequency channel mixing of the GSPConv layer is timed too, as the
batched matmul used in the model against a numba loop, to document why
that operation is left to BLAS.
"""

import argparse
import time

import numpy as np

from gspnet import _kernels
from gspnet.linalg import jacobi_eigh

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        started = time.perf_counter()
        fn()
        times.append(time.perf_counter() - started)
    return min(times)


def bench_jacobi(sizes, repeat):
    print("jacobi_eigh (random symmetric, seconds, best of %d)" % repeat)
    print(f"{'n':>5} {'numba':>10} {'numpy':>10} {'speedup':>8} identical")
    rng = np.random.default_rng(0)
    jacobi_eigh(np.eye(4), use_numba=True)  # compile outside the timing
    for n in sizes:
        a = rng.uniform(-1, 1, size=(n, n))
        a = (a + a.T) / 2
        fast = jacobi_eigh(a, use_numba=True)
        slow = jacobi_eigh(a, use_numba=False)
        same = fast.vectors.tobytes() == slow.vectors.tobytes() and fast.values.tobytes() == slow.values.tobytes()
        t_fast = best_of(lambda: jacobi_eigh(a, use_numba=True), repeat)
        t_slow = best_of(lambda: jacobi_eigh(a, use_numba=False), repeat)
        print(f"{n:>5} {t_fast:>10.4f} {t_slow:>10.4f} {t_slow / t_fast:>7.1f}x {same}")


if njit is not None:

    @njit(cache=True)
    def _mix_loops(xhat, theta, out):
        k, nb, ci = xhat.shape
        co = theta.shape[2]
        for l in range(k):
            for b in range(nb):
                for i in range(ci):
                    x = xhat[l, b, i]
                    for o in range(co):
                        out[l, b, o] += x * theta[l, i, o]
        return out


def bench_mix(repeat):
    print("\nspectral mix forward (float32, seconds, best of %d)" % repeat)
    print(f"{'K,B,cin,cout':>18} {'numba':>10} {'matmul':>10}")
    rng = np.random.default_rng(1)
    for shape in [(64, 32, 1, 16), (64, 32, 16, 16), (360, 32, 128, 128)]:
        k, nb, ci, co = shape
        xhat = rng.normal(size=(k, nb, ci)).astype(np.float32)
        theta = rng.normal(size=(k, ci, co)).astype(np.float32)
        t_mm = best_of(lambda: np.matmul(xhat, theta), repeat)
        if njit is None:
            t_nb = float("nan")
        else:
            _mix_loops(xhat, theta, np.zeros((k, nb, co), np.float32))
            t_nb = best_of(lambda: _mix_loops(xhat, theta, np.zeros((k, nb, co), np.float32)), repeat)
        print(f"{str(shape):>18} {t_nb:>10.5f} {t_mm:>10.5f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 360])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if not _kernels.USE_NUMBA:
        print("numba disabled (GSPNET_DISABLE_NUMBA set or numba missing); only the numpy path is available")
        return
    bench_jacobi(args.sizes, args.repeat)
    bench_mix(args.repeat)


if __name__ == "__main__":
    main()
