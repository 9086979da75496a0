"""Time the compiled hot-loop kernels against the pure NumPy reference.

Runs every kernel on production-sized inputs, reports best-of-N wall
times for both backends, and compares outputs. The gather/scatter
kernels agree bitwise; the fused cell kernels may differ in the last
float32 ulp because libm and NumPy round transcendentals differently.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from stepsmith.kernels import reference

try:
    from stepsmith.kernels import _hot
except ImportError:
    _hot = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def make_cases(rng):
    # shapes taken from the production models: conv input after pooling
    # (batch, samples, bands, channels) and LSTM gate blocks (rows, 4*units)
    x = rng.standard_normal((32, 32, 27, 16)).astype(np.float32)
    cols = reference.im2col3x3(x)
    preact = rng.standard_normal((1024, 512)).astype(np.float32)
    c_prev = rng.standard_normal((1024, 128)).astype(np.float32)
    _, _, gates, tanh_c = reference.cell_forward(preact, c_prev)
    dh = rng.standard_normal((1024, 128)).astype(np.float32)
    dc = rng.standard_normal((1024, 128)).astype(np.float32)
    return [
        ("im2col3x3", (x,), {}),
        ("col2im3x3", (cols, 16), {}),
        ("cell_forward", (preact, c_prev), {}),
        ("cell_backward_h", (dh, gates, tanh_c), {}),
        ("cell_backward_c", (dc, gates, c_prev), {}),
    ]


def flatten(result):
    if isinstance(result, tuple):
        return [np.asarray(r) for r in result]
    return [np.asarray(result)]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20,
                        help="timing repetitions per kernel (default 20)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = make_cases(rng)

    print(f"{'kernel':<18} {'reference':>12} {'compiled':>12} {'speedup':>9}  match")
    for name, call_args, call_kwargs in cases:
        ref_fn = getattr(reference, name)
        t_ref = best_of(lambda: ref_fn(*call_args, **call_kwargs), args.repeats)
        if _hot is None:
            print(f"{name:<18} {t_ref * 1e3:>10.3f}ms {'n/a':>12} {'n/a':>9}")
            continue
        hot_fn = getattr(_hot, name)
        t_hot = best_of(lambda: hot_fn(*call_args, **call_kwargs), args.repeats)
        ref_out = flatten(ref_fn(*call_args, **call_kwargs))
        hot_out = flatten(hot_fn(*call_args, **call_kwargs))
        worst = max(float(np.abs(a - b).max()) for a, b in zip(ref_out, hot_out))
        match = "bitwise" if worst == 0.0 else f"<={worst:.1e}"
        print(f"{name:<18} {t_ref * 1e3:>10.3f}ms {t_hot * 1e3:>10.3f}ms "
              f"{t_ref / t_hot:>8.1f}x  {match}")
    if _hot is None:
        print("\ncompiled extension not built; only the reference backend ran")


if __name__ == "__main__":
    main()
