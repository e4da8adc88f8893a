"""Benchmark the compiled kernel extension against the numpy backend.

Run after installing the package:

    python3 benchmarks/bench_kernels.py [--repeats N] [--sizes small|full]

For each kernel and shape the script times both backends, reports the
speedup of the extension over numpy, and verifies the outputs agree to
1e-10. Note that on wide convolutions the numpy backend is often faster
because it dispatches to BLAS; the extension mainly wins on small shapes
where the reshaping overhead dominates.
"""
import argparse
import time

import numpy as np

from coreseg.kernels import ConvSpec, _numpy_backend

try:
    from coreseg.kernels import _fastkernels
except ImportError:
    _fastkernels = None


CONV_CASES = {
    "small": [("conv 8x64x64 k3 -> 8", 8, 8, 64, 3),
              ("conv 1x224x224 k3 -> 8", 1, 8, 224, 3)],
    "full": [("conv 8x64x64 k3 -> 8", 8, 8, 64, 3),
             ("conv 1x224x224 k3 -> 8", 1, 8, 224, 3),
             ("conv 64x224x224 k3 -> 64", 64, 64, 224, 3)],
}
POOL_CASES = [("maxpool 64x224x224 w2 s2", 64, 224, 2, 2)]
RESIZE_CASES = [("resize 64x56x56 -> 224x224", 64, 56, 224)]


def timed(fn, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def compare(name, numpy_fn, ext_fn, repeats):
    t_np, out_np = timed(numpy_fn, repeats)
    t_ext, out_ext = timed(ext_fn, repeats)
    diff = float(np.abs(out_np - out_ext).max())
    agree = "ok" if diff <= 1e-10 else f"DISAGREE ({diff:.2e})"
    print(f"{name:<34} numpy {t_np * 1e3:9.2f} ms   ext {t_ext * 1e3:9.2f} ms"
          f"   ext/numpy {t_np / t_ext:5.2f}x   {agree}")
    return diff


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--sizes", choices=("small", "full"), default="full")
    args = parser.parse_args()

    if _fastkernels is None:
        raise SystemExit("compiled extension not available; build it first "
                         "(pip install -e . --no-build-isolation)")

    rng = np.random.default_rng(0)
    worst = 0.0
    for name, in_c, out_c, size, k in CONV_CASES[args.sizes]:
        x = rng.normal(size=(in_c, size, size))
        weights = rng.normal(size=(out_c, in_c, k, k))
        bias = rng.normal(size=out_c)
        spec = ConvSpec(out_c, in_c, k, k, 1, k // 2, weights, bias)
        worst = max(worst, compare(
            name,
            lambda: _numpy_backend.conv2d(x, spec.weights, spec.bias, 1, k // 2),
            lambda: _fastkernels.conv2d(x, spec.weights, spec.bias, 1, k // 2),
            args.repeats))

    for name, c, size, window, stride in POOL_CASES:
        x = rng.normal(size=(c, size, size))
        worst = max(worst, compare(
            name,
            lambda: _numpy_backend.maxpool(x, window, stride),
            lambda: _fastkernels.maxpool(x, window, stride),
            args.repeats))

    for name, c, src, dst in RESIZE_CASES:
        x = rng.normal(size=(c, src, src))
        worst = max(worst, compare(
            name,
            lambda: _numpy_backend.bilinear_resize(x, dst, dst),
            lambda: _fastkernels.bilinear_resize(x, dst, dst),
            args.repeats))

    print(f"\nmax abs disagreement across all cases: {worst:.2e}")
    if worst > 1e-10:
        raise SystemExit("backends disagree beyond 1e-10")


if __name__ == "__main__":
    main()
