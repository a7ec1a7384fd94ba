"""Numba vs numpy timings for the hot kernels.

Usage::

    python benchmarks/bench_kernels.py [--N 64] [--repeat 5]

Both flavours are called directly (the ``CARTANLAB_NUMBA`` switch only picks
the default dispatch), so one process compares them. The first numba call is
timed separately as compile/cache-load time. Results are checked for
agreement before timing.
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from cartanlab import kernels
from cartanlab._accel import HAVE_NUMBA
from cartanlab.algebra import make_algebra
from cartanlab.forms import GridSpec, bracket_triplets, shuffle_table
from cartanlab.immersion import clifford, jacobian


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(N: int):
    rng = np.random.default_rng(0)
    so3 = make_algebra("so:3")
    n = 3
    P = N ** n
    a = rng.standard_normal((P, math.comb(n, 1), so3.dim))
    b = rng.standard_normal((P, math.comb(n, 1), so3.dim))
    table = shuffle_table(n, 1, 1)
    trip = bracket_triplets(so3)
    yield ("wedge_bracket 1x1 so(3) T^3",
           lambda: kernels.wedge_apply_numpy(a, b, table, trip, math.comb(n, 2), so3.dim),
           lambda: kernels.wedge_apply_numba(a, b, table, trip, math.comb(n, 2), so3.dim))

    f = rng.standard_normal((N, N, N, 9))
    h = (1.0 / N,) * 3
    yield ("laplacian T^3 (9 comps)",
           lambda: kernels.laplacian_apply_numpy(f, h, 1.0),
           lambda: kernels.laplacian_apply_numba(f, h, 1.0))

    g2 = GridSpec.cube(2, 2 * N)
    u = clifford(g2)
    jac = jacobian(u).reshape(-1, 4, 2)
    yield ("gram-schmidt frames Clifford",
           lambda: kernels.frames_gram_schmidt_numpy(jac),
           lambda: kernels.frames_gram_schmidt_numba(jac))

    E, _ = kernels.frames_gram_schmidt_numpy(jac)
    normals = np.ascontiguousarray(E[:, :, 2:])
    shape = g2.sizes
    parent = kernels.sweep_parents(shape)
    yield ("normal sweep alignment",
           lambda: kernels.sweep_align_numpy(normals, parent, shape),
           lambda: kernels.sweep_align_numba(normals, parent))


def _max_diff(x, y) -> float:
    if isinstance(x, tuple):
        return max(_max_diff(p, q) for p, q in zip(x, y))
    return float(np.max(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=48)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba unavailable (or CARTANLAB_NUMBA=0); numpy timings only")
    print(f"{'kernel':34s} {'numpy [s]':>10s} {'numba [s]':>10s} {'compile [s]':>11s} {'speedup':>8s} {'max diff':>9s}")
    for name, f_np, f_nb in cases(args.N):
        t_np = _best(f_np, args.repeat)
        if HAVE_NUMBA:
            t0 = time.perf_counter()
            out_nb = f_nb()
            t_first = time.perf_counter() - t0
            t_nb = _best(f_nb, args.repeat)
            diff = _max_diff(f_np(), out_nb)
            print(f"{name:34s} {t_np:10.4f} {t_nb:10.4f} {t_first:11.3f} {t_np / t_nb:8.1f} {diff:9.1e}")
        else:
            print(f"{name:34s} {t_np:10.4f} {'-':>10s} {'-':>11s} {'-':>8s} {'-':>9s}")


if __name__ == "__main__":
    main()
