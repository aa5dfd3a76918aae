"""Compare the compiled kernels with the numpy/pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per kernel and backend, the speedup, and
whether both backends returned identical results.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from gpplane import _fallback

try:
    from gpplane import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(rng):
    mask = rng.random((96, 96)) > 0.55
    x = rng.standard_normal((32, 16, 48, 48)).astype(np.float32)
    out, idx = _fallback.maxpool_forward(x, 2)
    dout = rng.standard_normal(out.shape).astype(np.float32)
    cols = rng.standard_normal((8, 24, 24, 16, 3, 3)).astype(np.float32)
    seq = (rng.random(642) > 0.4).astype(np.uint8)
    return {
        "label4 96x96": lambda m: m.label4(mask),
        "maxpool_forward 32x16x48x48": lambda m: m.maxpool_forward(x, 2),
        "maxpool_backward": lambda m: m.maxpool_backward(dout, idx, 48, 48, 2),
        "col2im 8x24x24x16 k3": lambda m: m.col2im(cols, 26, 26, 1),
        "close1d n=642 k=5": lambda m: m.close1d(seq, 5),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<30}{'python ms':>11}{'cython ms':>11}{'speedup':>9}  equal")
    for name, run in cases.items():
        t_py = min(timeit.repeat(lambda: run(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<30}{t_py:>11.3f}{'n/a':>11}{'':>9}  -")
            continue
        t_c = min(timeit.repeat(lambda: run(_ckernels), number=1, repeat=args.repeat)) * 1e3
        equal = _same(run(_fallback), run(_ckernels))
        print(f"{name:<30}{t_py:>11.3f}{t_c:>11.3f}{t_py / t_c:>8.1f}x  {equal}")


if __name__ == "__main__":
    main()
