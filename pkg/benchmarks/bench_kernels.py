"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from pathlora import _fallback
from pathlora.linalg import Prng

try:
    from pathlora import _kernels
except ImportError:
    _kernels = None


def bench_xoshiro(mod, n):
    state = np.array([1, 2, 3, 4], dtype=np.uint64)
    out = np.empty(n, dtype=np.uint64)
    return lambda: mod.xoshiro_fill(state, out)


def bench_jacobi(mod, rows, cols):
    base = np.ascontiguousarray(Prng(0).normal(rows * cols).reshape(rows, cols))

    def run():
        mod.jacobi_sweeps(base.copy(), np.eye(rows), 1e-14, 60)
    return run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    mods = {"python": _fallback}
    if _kernels is not None:
        mods["cython"] = _kernels
    cases = [("xoshiro n=100000", lambda m: bench_xoshiro(m, 100_000)),
             ("jacobi 8x32", lambda m: bench_jacobi(m, 8, 32)),
             ("jacobi 32x64", lambda m: bench_jacobi(m, 32, 64))]
    print(f"{'case':<20}" + "".join(f"{name:>14}" for name in mods) + f"{'speedup':>10}")
    for label, make in cases:
        times = {name: min(timeit.repeat(make(mod), number=1, repeat=args.repeat))
                 for name, mod in mods.items()}
        speed = f"{times['python'] / times['cython']:.1f}x" if "cython" in times else "-"
        print(f"{label:<20}" + "".join(f"{t * 1e3:>12.2f}ms" for t in times.values()) + f"{speed:>10}")


if __name__ == "__main__":
    main()
