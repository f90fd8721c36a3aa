"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints median wall time per call and the speedup for power iteration on Gram
matrices and for two-pass Gram-Schmidt, at a few sizes. Both backends get
identical inputs; their results are checked for agreement first.
"""
import argparse
import statistics
import sys
import time

import numpy as np

from spectrallab import _fallback

try:
    from spectrallab import _kernels
except ImportError:
    _kernels = None


def timeit(fn, make_args, repeat):
    times = []
    for _ in range(repeat):
        args = make_args()
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_power(n, repeat, rng):
    a = rng.standard_normal((n, n + 16))
    gram = np.ascontiguousarray(a @ a.T)
    start = rng.standard_normal(n)

    def args():
        return gram, start, 1e-6, 1000

    ref = _fallback.gram_power_iteration(*args())
    got = _kernels.gram_power_iteration(*args())
    assert abs(ref[0] - got[0]) <= 1e-9 * ref[0], (ref, got)
    return timeit(_fallback.gram_power_iteration, args, repeat), timeit(_kernels.gram_power_iteration, args, repeat)


def bench_gram_schmidt(k, n, repeat, rng):
    g = rng.standard_normal((k, n))

    def args():
        return (g.copy(),)

    assert np.allclose(_fallback.orthonormalize_rows(g.copy()), _kernels.orthonormalize_rows(g.copy()), atol=1e-10)
    return (timeit(_fallback.orthonormalize_rows, args, repeat),
            timeit(_kernels.orthonormalize_rows, args, repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repeat", type=int, default=7)
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python (ms)':>12}{'compiled (ms)':>15}{'speedup':>9}")
    rows = [(f"power_iteration n={n}", bench_power(n, args.repeat, rng)) for n in (16, 64, 256, 1024)]
    rows += [(f"gram_schmidt {k}x{n}", bench_gram_schmidt(k, n, args.repeat, rng))
             for k, n in ((16, 64), (64, 256), (256, 256), (256, 1024))]
    for name, (tp, tc) in rows:
        print(f"{name:<28}{tp * 1e3:12.3f}{tc * 1e3:15.3f}{tp / tc:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
