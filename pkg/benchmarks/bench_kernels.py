"""Compiled kernels versus the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is timed on the
same inputs through both backends and the outputs are checked for agreement.
"""
import argparse
import time

import numpy as np

from dpsynth import _kernels_py

try:
    from dpsynth import _kernels
except ImportError:
    _kernels = None


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.random((2000, 2))
    cand = rng.random((300, 64))
    votes = rng.random((1400, 64))
    return {
        "rdp_log_a_int (255 orders)": lambda m: [m.rdp_log_a_int(0.01, 1.1, a) for a in range(2, 257)],
        "nearest 1400x300 d=64": lambda m: m.nearest(votes, cand),
        "knn_sq_radius n=2000 k=3": lambda m: m.knn_sq_radius(pts, 3),
        "vote_histogram 1400x300": lambda m: m.vote_histogram(votes, cand),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-9, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':32s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}  agree")
    for name, run in cases().items():
        t_py, out_py = _best_of(lambda: run(_kernels_py), args.repeat)
        if _kernels is None:
            print(f"{name:32s} {t_py:10.4f} {'-':>10s} {'-':>8s}  -")
            continue
        t_c, out_c = _best_of(lambda: run(_kernels), args.repeat)
        print(f"{name:32s} {t_py:10.4f} {t_c:10.4f} {t_py / t_c:8.1f}x  {_same(out_py, out_c)}")


if __name__ == "__main__":
    main()
