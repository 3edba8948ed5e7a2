#!/usr/bin/env python3
"""Time the numba and numpy convolution backends side by side.

The backbone-sized conv2d cases dominate end-to-end training time, so
they are the ones worth watching. matmul/GAP ride on BLAS/numpy
reductions in both backends and are not duplicated here.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from gapnet import kernels as K

CASES_2D = [
    # name, input, filters, stride  (the two toy-backbone stages)
    ("conv2d 224x224x3 -> 5x5x3x8 /2", (224, 224, 3), (5, 5, 3, 8), 2),
    ("conv2d 110x110x8 -> 5x5x8x16 /2", (110, 110, 8), (5, 5, 8, 16), 2),
    ("conv2d 32x32x8   -> 3x3x8x8  /1", (32, 32, 8), (3, 3, 8, 8), 1),
]

CASES_1D = [
    ("conv1d n=512 K=3 x8 filters", 512, (8, 3)),
    ("conv1d n=4096 K=9 x16 filters", 4096, (16, 9)),
]


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for name, xshape, wshape, stride in CASES_2D:
        x = rng.standard_normal(xshape).astype(np.float32)
        w = rng.standard_normal(wshape).astype(np.float32)
        b = rng.standard_normal(wshape[3]).astype(np.float32)
        g = np.asarray(K.np_conv2d_forward(x, w, b, stride))
        variants = {"numpy": (lambda: K.np_conv2d_forward(x, w, b, stride),
                              lambda: K.np_conv2d_backward(x, w, g, stride))}
        if K.HAVE_NUMBA:
            K.nb_conv2d_forward(x, w, b, stride)  # trigger jit outside timing
            K.nb_conv2d_backward(x, w, g, stride)
            variants["numba"] = (lambda: K.nb_conv2d_forward(x, w, b, stride),
                                 lambda: K.nb_conv2d_backward(x, w, g, stride))
        for backend, (fwd, bwd) in variants.items():
            rows.append((name, backend, best_of(fwd, repeats), best_of(bwd, repeats)))

    for name, n, wshape, in CASES_1D:
        x = rng.standard_normal(n).astype(np.float32)
        w = rng.standard_normal(wshape).astype(np.float32)
        b = rng.standard_normal(wshape[0]).astype(np.float32)
        g = np.asarray(K.np_conv1d_forward(x, w, b))
        variants = {"numpy": (lambda: K.np_conv1d_forward(x, w, b),
                              lambda: K.np_conv1d_backward(x, w, g))}
        if K.HAVE_NUMBA:
            K.nb_conv1d_forward(x, w, b)
            K.nb_conv1d_backward(x, w, g)
            variants["numba"] = (lambda: K.nb_conv1d_forward(x, w, b),
                                 lambda: K.nb_conv1d_backward(x, w, g))
        for backend, (fwd, bwd) in variants.items():
            rows.append((name, backend, best_of(fwd, repeats), best_of(bwd, repeats)))
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()
    print(f"active backend: {K.BACKEND} (set GAPNET_BACKEND=numpy|numba to force)")
    print(f"{'case':38} {'backend':8} {'forward ms':>11} {'backward ms':>12}")
    for name, backend, fwd, bwd in bench(args.repeats):
        print(f"{name:38} {backend:8} {fwd * 1e3:11.3f} {bwd * 1e3:12.3f}")


if __name__ == "__main__":
    main()
