"""Compare the compiled and numpy convolution backends.

Times conv1d_forward / conv1d_backward on a few sequence shapes and checks
the two implementations agree numerically. Run from the repo root:

    python3 benchmarks/bench_conv.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gaf import _np_conv

try:
    from gaf import _conv
except ImportError:
    _conv = None

# (T, C_in, C_out, k, stride) covering the shapes the models actually use
# plus a couple of fatter ones where the python loop overhead shows
CASES = [
    (128, 16, 16, 3, 1),
    (128, 17, 16, 3, 1),
    (512, 32, 32, 3, 1),
    (2048, 32, 64, 5, 2),
    (4096, 64, 64, 3, 1),
]


def median_time(fn, repeats: int) -> float:
    fn()  # warmup so first-touch costs stay out of the medians
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_case(t_len, c_in, c_out, k, stride, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((t_len, c_in))
    w = rng.standard_normal((k, c_in, c_out))
    b = rng.standard_normal(c_out)
    pad = (k - 1) // 2
    t_out = (t_len + 2 * pad - k) // stride + 1
    gy = rng.standard_normal((t_out, c_out))

    rows = []
    y_np = _np_conv.conv1d_forward(x, w, b, stride, pad, t_out)
    g_np = _np_conv.conv1d_backward(gy, x, w, stride, pad)
    fwd_np = median_time(lambda: _np_conv.conv1d_forward(x, w, b, stride, pad, t_out), repeats)
    bwd_np = median_time(lambda: _np_conv.conv1d_backward(gy, x, w, stride, pad), repeats)
    rows.append(("numpy", fwd_np, bwd_np, 0.0))

    if _conv is not None:
        y_cy = _conv.conv1d_forward(x, w, b, stride, pad, t_out)
        g_cy = _conv.conv1d_backward(gy, x, w, stride, pad)
        err = max(
            float(np.abs(y_cy - y_np).max()),
            max(float(np.abs(a - b_).max()) for a, b_ in zip(g_cy, g_np)),
        )
        fwd_cy = median_time(lambda: _conv.conv1d_forward(x, w, b, stride, pad, t_out), repeats)
        bwd_cy = median_time(lambda: _conv.conv1d_backward(gy, x, w, stride, pad), repeats)
        rows.append(("cython", fwd_cy, bwd_cy, err))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=25)
    args = ap.parse_args()

    if _conv is None:
        print("compiled backend not importable; timing numpy only\n")

    hdr = f"{'shape (T,Cin,Cout,k,s)':>24} {'backend':>8} {'fwd us':>10} {'bwd us':>10} {'fwd x':>7} {'max|diff|':>10}"
    print(hdr)
    print("-" * len(hdr))
    for case in CASES:
        rows = bench_case(*case, repeats=args.repeats)
        base_fwd = rows[0][1]
        for name, fwd, bwd, err in rows:
            speedup = f"{base_fwd / fwd:6.2f}x" if name != "numpy" else "  1.00x"
            err_s = f"{err:10.1e}" if name != "numpy" else " " * 10
            print(f"{str(case):>24} {name:>8} {fwd * 1e6:10.1f} {bwd * 1e6:10.1f} {speedup:>7} {err_s}")
    print()


if __name__ == "__main__":
    main()
