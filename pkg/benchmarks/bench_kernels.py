"""Compare the numba and numpy kernel backends on the shapes the image models use.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 128]

Each kernel is timed after one warm-up call (so numba compilation is
excluded) and outputs of the two backends are cross-checked.
"""

import argparse
import time

import numpy as np

from cmem import kernels

CASES = [
    # name, input NCHW, filters (F, C, k, k)
    ("conv_vae enc 5x5", (1, 1, 28, 56), (8, 1, 5, 5)),
    ("conv_vae dec 5x5", (1, 8, 28, 56), (8, 8, 5, 5)),
    ("conv_ae enc 3x3", (1, 16, 14, 28), (8, 16, 3, 3)),
    ("baseline 3x3", (1, 8, 28, 56), (1, 8, 3, 3)),
]


def _time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench(batch, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, xs, ws in CASES:
        x = rng.standard_normal((batch,) + xs[1:]).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        b = rng.standard_normal(ws[0]).astype(np.float32)
        dy = rng.standard_normal((batch, ws[0]) + xs[2:]).astype(np.float32)
        flops = 2.0 * batch * ws[0] * ws[1] * ws[2] * ws[3] * xs[2] * xs[3]
        results = {}
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            fwd = _time(lambda: kernels.conv2d_forward(x, w, b), repeat)
            bwd = _time(lambda: kernels.conv2d_backward(x, w, dy), repeat)
            results[backend] = (fwd, bwd, kernels.conv2d_forward(x, w, b))
        if len(results) == 2:
            diff = float(np.max(np.abs(results["numba"][2] - results["numpy"][2])))
            assert diff < 1e-3, f"backends disagree on {name}: {diff}"
        for backend, (fwd, bwd, _) in results.items():
            rows.append((name, backend, fwd * 1e3, bwd * 1e3, flops / fwd / 1e9))

    x = rng.standard_normal((batch, 8, 28, 56)).astype(np.float32)
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        pool = _time(lambda: kernels.maxpool2x2_forward(x), repeat)
        up = _time(lambda: kernels.upsample2x2_forward(x[:, :, :14, :28]), repeat)
        rows.append(("maxpool 2x2", backend, pool * 1e3, float("nan"), float("nan")))
        rows.append(("upsample 2x2", backend, up * 1e3, float("nan"), float("nan")))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=128)
    args = parser.parse_args()
    initial = kernels.BACKEND
    try:
        rows = bench(args.batch, args.repeat)
    finally:
        kernels.use_backend(initial)
    print(f"batch={args.batch}, best of {args.repeat}")
    print(f"{'kernel':<18}{'backend':<9}{'fwd ms':>10}{'bwd ms':>10}{'fwd GFLOP/s':>13}")
    for name, backend, fwd, bwd, gf in rows:
        print(f"{name:<18}{backend:<9}{fwd:>10.2f}{bwd:>10.2f}{gf:>13.2f}")


if __name__ == "__main__":
    main()
