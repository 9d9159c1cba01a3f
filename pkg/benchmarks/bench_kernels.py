"""Time the compiled and numpy convolution/pooling kernels on model-sized inputs.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each row reports the best-of-``repeat`` wall time per call for both
backends and checks that their outputs agree.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from specreplay.autodiff import _kernels_py

try:
    from specreplay.autodiff import _kernels_cy
except ImportError:  # extension not built
    _kernels_cy = None

# (name, input shape NHWC, kernel, stride, pad) drawn from the spectrogram model at desk and full scale
CASES = [
    ("conv1 3x3, 32 frames x 1025 bins", (16, 32, 1025, 1), (3, 3), (1, 1), (1, 1, 1, 1)),
    ("res1 3x5, 32 x 513 x 8", (16, 32, 513, 8), (3, 5), (1, 1), (1, 1, 2, 2)),
    ("res3 3x5, 8 x 33 x 16", (16, 8, 33, 16), (3, 5), (1, 1), (1, 1, 2, 2)),
    ("full-scale conv1, 120 x 1025 x 1", (4, 120, 1025, 1), (3, 3), (1, 1), (1, 1, 1, 1)),
]
POOLS = [
    ("pool 2x4, 32 x 1025 x 8", (16, 32, 1025, 8), (2, 4), (2, 4), (0, 0, 0, 3)),
    ("pool 2x4, 120 x 1025 x 16", (4, 120, 1025, 16), (2, 4), (2, 4), (0, 0, 0, 3)),
]


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_conv(impl, shape, k, s, pad, rng):
    x = rng.standard_normal(shape).astype(np.float32)
    cols = impl.im2col(x, *k, *s, pad)
    return (lambda: impl.im2col(x, *k, *s, pad)), (lambda: impl.col2im(cols, x.shape, *s, pad)), (x, cols)


def run(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, shape, k, s, pad in CASES:
        fwd_py, bwd_py, (x, cols) = bench_conv(_kernels_py, shape, k, s, pad, rng)
        row = {"case": name, "op": "im2col", "python": best_time(fwd_py, repeat)}
        row2 = {"case": name, "op": "col2im", "python": best_time(bwd_py, repeat)}
        if _kernels_cy is not None:
            row["cython"] = best_time(lambda: _kernels_cy.im2col(x, *k, *s, pad), repeat)
            row2["cython"] = best_time(lambda: _kernels_cy.col2im(cols, x.shape, *s, pad), repeat)
            row["agree"] = bool(np.array_equal(_kernels_py.im2col(x, *k, *s, pad), _kernels_cy.im2col(x, *k, *s, pad)))
            row2["agree"] = bool(np.allclose(_kernels_py.col2im(cols, x.shape, *s, pad),
                                             _kernels_cy.col2im(cols, x.shape, *s, pad), rtol=1e-5, atol=1e-5))
        rows += [row, row2]
    for name, shape, k, s, pad in POOLS:
        x = rng.standard_normal(shape).astype(np.float32)
        out, idx = _kernels_py.maxpool_forward(x, *k, *s, pad)
        g = np.ones_like(out)
        row = {"case": name, "op": "maxpool fwd", "python": best_time(lambda: _kernels_py.maxpool_forward(x, *k, *s, pad), repeat)}
        row2 = {"case": name, "op": "maxpool bwd", "python": best_time(lambda: _kernels_py.maxpool_backward(g, idx, x.shape), repeat)}
        if _kernels_cy is not None:
            row["cython"] = best_time(lambda: _kernels_cy.maxpool_forward(x, *k, *s, pad), repeat)
            row2["cython"] = best_time(lambda: _kernels_cy.maxpool_backward(g, idx, x.shape), repeat)
            cy_out, cy_idx = _kernels_cy.maxpool_forward(x, *k, *s, pad)
            row["agree"] = bool(np.array_equal(out, cy_out) and np.array_equal(idx, cy_idx))
            row2["agree"] = bool(np.array_equal(_kernels_py.maxpool_backward(g, idx, x.shape),
                                                _kernels_cy.maxpool_backward(g, idx, x.shape)))
        rows += [row, row2]
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the rows as JSON")
    args = ap.parse_args(argv)
    if _kernels_cy is None:
        print("compiled kernels not available; timing the numpy backend only", file=sys.stderr)
    rows = run(args.repeat)
    print(f"{'case':<36} {'op':<12} {'numpy ms':>9} {'cython ms':>10} {'speedup':>8} agree")
    for r in rows:
        cy = r.get("cython")
        print(f"{r['case']:<36} {r['op']:<12} {1e3 * r['python']:>9.2f} "
              + (f"{1e3 * cy:>10.2f} {r['python'] / cy:>7.1f}x {r['agree']}" if cy else f"{'-':>10} {'-':>8} -"))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
