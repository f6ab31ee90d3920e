"""Time the compiled and numpy backends on the three hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from memhjb import _core
from memhjb.kernel import linear_exp_weights


def cases(rng):
    n = 201
    nK = 3
    w = rng.random((n, n))
    ix = rng.integers(0, n - 1, (nK, n, n))
    iy = rng.integers(0, n - 1, (nK, n, n))
    tx = rng.random((nK, n, n))
    ty = rng.random((nK, n, n))
    L = rng.random((nK, n, n))
    out = np.empty_like(w)
    z = np.ascontiguousarray(rng.normal(size=(240_001, 1)))
    e, a, b = linear_exp_weights(1.0, 1.25e-4)
    kern = np.exp(-1e-3 * np.arange(5001))
    y = rng.normal(size=5001)
    return {
        "sl_sweep 201^2 x 3": lambda m: m.sl_sweep(w, ix, iy, tx, ty, L, 0.99, out),
        "exp_sweeps 240001": lambda m: m.exp_sweeps(z, e, a, b),
        "causal_trapezoid 5001": lambda m: m.causal_trapezoid(kern, y, 1e-3),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = _core.backends()
    if "compiled" not in backends:
        print("compiled backend not built; timing the numpy fallback only")
    print(f"{'kernel':<24}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {name: min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) for name, mod in backends.items()}
        row = f"{label:<24}" + "".join(f"{t * 1e3:>12.2f}ms" for t in times.values())
        if "compiled" in times:
            row += f"{times['python'] / times['compiled']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
