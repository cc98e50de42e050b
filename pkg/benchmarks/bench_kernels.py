#!/usr/bin/env python3
"""Benchmark the numba and pure-numpy kernel paths against each other.

Runs every hot kernel on realistic sizes (a 306x306 tile and its stride-2
feature grid), checks that both implementations agree, and prints a timing
table. Usage:

    python benchmarks/bench_kernels.py [--image 306] [--gamma 5] [--repeats 5]
"""

import argparse
import time

import numpy as np

from wsseg import kernels
from wsseg.model import grid_shape


def best_of(fn, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        started = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - started)
    return best, result


def agreement(a, b):
    if isinstance(a, tuple):
        return max(agreement(x, y) for x, y in zip(a, b))
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), 1.0)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--image", type=int, default=306, help="image side in pixels")
    parser.add_argument("--gamma", type=float, default=5.0, help="neighborhood radius")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    side = args.image
    gh, gw = grid_shape(side, side, 2)
    cells = gh * gw

    image = rng.uniform(0, 1, (side, side, 3)).astype(np.float32)
    w1 = rng.standard_normal((3, 3, 3, 16)).astype(np.float32) * 0.1
    b1 = np.zeros(16, np.float32)
    gy = rng.standard_normal((side, side, 16)).astype(np.float32)

    feat = rng.uniform(0, 1, (cells, 16)).astype(np.float32)
    dr_full, dc_full = kernels.neighbor_offsets(args.gamma, include_center=True)
    dr_fwd, dc_fwd = kernels.neighbor_offsets(args.gamma, forward_only=True)
    indptr, cols, vals = kernels.affinity_csr_numpy(feat, gh, gw, dr_full, dc_full)
    x = rng.uniform(0, 1, cells)

    codes = rng.integers(0, 3, size=(gh, gw)).astype(np.uint8)
    codes[rng.random((gh, gw)) < 0.2] = 255

    n_pairs = 100_000
    ii = rng.integers(0, cells, n_pairs)
    jj = rng.integers(0, cells, n_pairs)
    coef = rng.standard_normal(n_pairs).astype(np.float32)

    cases = [
        ("conv2d 306x306 3->16",
         lambda F=kernels.conv2d_numba: F(image, w1, b1, 1, 1),
         lambda F=kernels.conv2d_numpy: F(image, w1, b1, 1, 1)),
        ("conv2d_grads 306x306",
         lambda F=kernels.conv2d_grads_numba: F(image, w1, gy, 1, 1),
         lambda F=kernels.conv2d_grads_numpy: F(image, w1, gy, 1, 1)),
        (f"csr_matvec {cells}x{cells} nnz={indptr[-1]}",
         lambda F=kernels.csr_matvec_numba: F(indptr, cols, vals, x),
         lambda F=kernels.csr_matvec_numpy: F(indptr, cols, vals, x)),
        (f"affinity_csr {gh}x{gw} gamma={args.gamma}",
         lambda F=kernels.affinity_csr_numba: F(feat, gh, gw, dr_full, dc_full),
         lambda F=kernels.affinity_csr_numpy: F(feat, gh, gw, dr_full, dc_full)),
        (f"partition_pairs {gh}x{gw}",
         lambda F=kernels.partition_pairs_numba: F(codes, dr_fwd, dc_fwd,
                                                   np.uint8(254), np.uint8(255)),
         lambda F=kernels.partition_pairs_numpy: F(codes, dr_fwd, dc_fwd,
                                                   np.uint8(254), np.uint8(255))),
        (f"pair_sign_grads {n_pairs} pairs",
         lambda F=kernels.pair_sign_grads_numba: F(np.zeros_like(feat), ii, jj, coef, feat),
         lambda F=kernels.pair_sign_grads_numpy: F(np.zeros_like(feat), ii, jj, coef, feat)),
    ]

    print(f"{'kernel':<38} {'numba ms':>10} {'numpy ms':>10} {'ratio':>7} {'max rel diff':>13}")
    print("-" * 84)
    for name, numba_fn, numpy_fn in cases:
        numba_fn()  # trigger jit compilation before timing
        t_nb, out_nb = best_of(numba_fn, args.repeats)
        t_np, out_np = best_of(numpy_fn, args.repeats)
        diff = agreement(out_nb, out_np)
        # float32 reductions over ~1e5 terms accumulate in different orders
        # on the two paths; anything past ~1e-4 relative is a real bug
        assert diff < 1e-4, f"{name}: paths disagree by {diff}"
        ratio = t_np / t_nb if t_nb > 0 else float("inf")
        print(f"{name:<38} {t_nb * 1e3:>10.2f} {t_np * 1e3:>10.2f} {ratio:>6.1f}x {diff:>13.2e}")
    print("\nall kernels agree across paths")


if __name__ == "__main__":
    main()
