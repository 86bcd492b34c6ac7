"""Hit-and-run kernel timing: compiled Cython kernel vs the numpy fallback.

Both kernels run the same number of steps from the same state on the case5
initial input space and on a box with extra random cut rows.  Also checks
that both kernels visit the same points over a short prefix (longer walks
drift apart through rounding in the row sums).

    python3 benchmarks/bench_walk.py [--steps 20000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from opflearn import polytope as poly
from opflearn._walk_py import walk as numpy_walk

try:
    from opflearn._walk import walk as cython_walk
except ImportError:
    cython_walk = None


def polytopes(rng):
    yield "case5 initial (d=6, 13 rows)", poly.init_input_space([8.19, 13.36, 12.82], 15.0)
    d = 20
    P = poly.HalfspacePolytope(np.vstack([np.eye(d), -np.eye(d)]), np.ones(2 * d))
    for _ in range(200):
        # cuts through random points at distance 0.9 keep the centre inside
        n = rng.standard_normal(d)
        n /= np.linalg.norm(n)
        P = poly.add_halfspace(P, 1.0 * n, 0.9 * n)
    yield "box with 200 cuts (d=20, 240 rows)", P


def run(P, kernel, steps, seed):
    st = poly.SamplerState.start(poly.chebyshev_center(P)[0], seed)
    t = time.perf_counter()
    pts = poly.walk(P, st, steps // 10, thin=10, kernel=kernel)
    return time.perf_counter() - t, pts


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if cython_walk is None:
        print("compiled kernel not built; only the numpy kernel is timed")
    print(f"default kernel: {poly.KERNEL}")
    for name, P in polytopes(np.random.default_rng(0)):
        t_np = min(run(P, numpy_walk, args.steps, 1)[0] for _ in range(args.repeat))
        line = f"{name}: numpy {1e6 * t_np / args.steps:7.2f} us/step"
        if cython_walk is not None:
            t_cy = min(run(P, cython_walk, args.steps, 1)[0] for _ in range(args.repeat))
            diff = np.max(np.abs(run(P, numpy_walk, 200, 1)[1] - run(P, cython_walk, 200, 1)[1]))
            line += f"  cython {1e6 * t_cy / args.steps:7.2f} us/step  speedup {t_np / t_cy:5.1f}x  diff over 200 steps {diff:.1e}"
        print(line)


if __name__ == "__main__":
    main()
