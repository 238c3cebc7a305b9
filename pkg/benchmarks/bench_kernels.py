"""Compare the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--csv PATH]
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from mgino import _pykernels
from mgino.bundle import write_csv

try:
    from mgino import _ckernels
except ImportError:
    _ckernels = None


def cases(rng: np.random.Generator):
    """(name, callable-factory) pairs at the sizes a training step sees."""
    q = rng.uniform(0.0, 1.0, size=(2000, 2))
    s = rng.uniform(0.0, 1.0, size=(4096, 2))
    yield "radius_neighbors 2000x4096 r=0.05", lambda mod: (lambda: mod.radius_neighbors(q, s, 0.05))
    q2 = rng.uniform(0.0, 1.0, size=(500, 2))
    s2 = rng.uniform(0.0, 1.0, size=(1056, 2))
    yield "radius_neighbors 500x1056 r=0.125", lambda mod: (lambda: mod.radius_neighbors(q2, s2, 0.125))
    vals = rng.standard_normal((40000, 8))
    ids = np.sort(rng.integers(0, 2000, 40000)).astype(np.int64)
    yield "segment_sum 40000x8 -> 2000", lambda mod: (lambda: mod.segment_sum(vals, ids, 2000))
    vals2 = rng.standard_normal((200000, 1))
    ids2 = rng.integers(0, 5000, 200000).astype(np.int64)
    yield "segment_sum 200000x1 -> 5000", lambda mod: (lambda: mod.segment_sum(vals2, ids2, 5000))


def check_agreement(rng: np.random.Generator) -> None:
    q = rng.uniform(0.0, 1.0, size=(300, 2))
    s = rng.uniform(0.0, 1.0, size=(700, 2))
    a = _pykernels.radius_neighbors(q, s, 0.1)
    b = _ckernels.radius_neighbors(q, s, 0.1)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.allclose(a[2], b[2], rtol=0, atol=1e-15)
    v = rng.standard_normal((1000, 3))
    ids = rng.integers(0, 50, 1000).astype(np.int64)
    assert np.allclose(_pykernels.segment_sum(v, ids, 50), _ckernels.segment_sum(v, ids, 50),
                       rtol=1e-12, atol=1e-12)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", help="optional CSV output path")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    check_agreement(rng)
    rows = []
    print(f"{'case':40s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, make in cases(rng):
        tp = min(timeit.repeat(make(_pykernels), number=1, repeat=args.repeat)) * 1e3
        tc = min(timeit.repeat(make(_ckernels), number=1, repeat=args.repeat)) * 1e3
        rows.append((name, tp, tc, tp / tc))
        print(f"{name:40s} {tp:12.3f} {tc:12.3f} {tp / tc:8.1f}")
    if args.csv:
        write_csv(args.csv, ("case", "python_ms", "cython_ms", "speedup"), rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
