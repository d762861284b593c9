"""Time the numba kernels against the pure-numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is called once untimed (numba compiles on first call), then
the best of N wall-clock timings is reported together with the speedup
and the max absolute difference between the two paths.
"""

import argparse
import time

import numpy as np

from bbh import kernels


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def max_diff(a, b):
    a, b = (a, b) if isinstance(a, tuple) else ((a,), (b,))
    return max(float(np.max(np.abs(np.asarray(x, float) - np.asarray(y, float)))) for x, y in zip(a, b))


def cases(rng):
    q, p = rng.normal(size=(6, 50_000)), rng.normal(size=(5, 50_000))
    yield "knn_d1 (n=6, m=5, P=50k)", "knn_d1", (q, p)
    q, p = rng.normal(size=(2000, 1)), rng.normal(size=(2000, 1))
    yield "knn_d1 (n=m=2000, P=1)", "knn_d1", (q, p)
    x = rng.normal(size=(100, 24, 24, 20))
    yield "maxpool2 (100x24x24x20)", "maxpool2", (x,)
    cols = rng.normal(size=(100, 24, 24, 5, 5, 20))
    yield "col2im (100x28x28x20, 5x5)", "col2im", (cols, (100, 28, 28, 20), 5, 5, 1)


def adam_case(rng, size=500_000):
    param, grad = rng.normal(size=size), rng.normal(size=size)
    m, v = np.zeros(size), np.zeros(size)
    return (param, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if kernels.numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    for label, name, inputs in cases(rng):
        fast, slow = getattr(kernels.numba_impl, name), getattr(kernels.numpy_impl, name)
        diff = max_diff(fast(*inputs), slow(*inputs))
        rows.append((label, best_of(slow, inputs, args.repeat), best_of(fast, inputs, args.repeat), diff))
    # adam mutates its buffers, so each path gets its own copy
    base = adam_case(rng)
    fresh = lambda: tuple(x.copy() if isinstance(x, np.ndarray) else x for x in base)  # noqa: E731
    p_fast, p_slow = fresh(), fresh()
    kernels.numba_impl.adam_update(*p_fast)
    kernels.numpy_impl.adam_update(*p_slow)
    diff = float(np.max(np.abs(p_fast[0] - p_slow[0])))
    rows.append(("adam_update (500k params)", best_of(kernels.numpy_impl.adam_update, fresh(), args.repeat),
                 best_of(kernels.numba_impl.adam_update, fresh(), args.repeat), diff))

    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, slow_t, fast_t, diff in rows:
        print(f"{label:32s} {slow_t * 1e3:10.2f} {fast_t * 1e3:10.2f} {slow_t / fast_t:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
