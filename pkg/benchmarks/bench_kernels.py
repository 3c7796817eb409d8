"""Time the linear-algebra kernels under the numba and numpy backends.

    python benchmarks/bench_kernels.py --sizes 64 128 256 --repeats 3

Each kernel is run once per backend before timing so numba's compilation is
excluded. The last column is numpy time / numba time; the agreement column is
the largest absolute difference between the two backends' outputs.
"""
import argparse
import statistics
import time

import numpy as np

from recdyn.numcore import eigenvalues, hessenberg, qr, singular_values, svd

KERNELS = {
    "singular_values": lambda a, b: singular_values(a, backend=b),
    "svd": lambda a, b: svd(a, backend=b).singular_values,
    "qr": lambda a, b: np.abs(np.diag(qr(a, backend=b)[1])),
    "hessenberg": lambda a, b: np.sort(np.abs(np.linalg.eigvals(hessenberg(a, backend=b)))),
    "eigenvalues": lambda a, b: np.abs(eigenvalues(a, backend=b)),
}


def timed(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--kernels", nargs="+", default=list(KERNELS), choices=list(KERNELS))
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    warm = rng.normal(size=(8, 8))
    for name in args.kernels:
        for backend in ("numba", "numpy"):
            KERNELS[name](warm, backend)

    print(f"{'kernel':<16}{'n':>6}{'numba s':>12}{'numpy s':>12}{'agreement':>12}{'speedup':>10}")
    for n in args.sizes:
        a = rng.normal(size=(n, n)) / np.sqrt(n)
        for name in args.kernels:
            t_jit, out_jit = timed(lambda: KERNELS[name](a, "numba"), args.repeats)
            t_np, out_np = timed(lambda: KERNELS[name](a, "numpy"), args.repeats)
            diff = float(np.max(np.abs(out_jit - out_np)))
            print(f"{name:<16}{n:>6}{t_jit:>12.4f}{t_np:>12.4f}{diff:>12.1e}{t_np / t_jit:>10.1f}")


if __name__ == "__main__":
    main()
