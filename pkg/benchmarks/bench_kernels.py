"""Compare the compiled kernels with their pure-Python fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``.  Prints best-of-N wall
times per kernel and backend, the speed-up, and the maximal deviation
between the two outputs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from multiblowup import _fallback

try:
    from multiblowup import _kernels
except ImportError:  # extension not built
    _kernels = None


def _radial(mod, nsteps: int):
    out_p = np.empty(nsteps + 1)
    out_dp = np.empty(nsteps + 1)
    # ground-state shooting near the true Q(0) in d = 1
    mod.rk4_radial(3 ** 0.25, 0.0, 0.0, 1e-3, nsteps, 1, 0.0, 4.0, True, True, out_p, out_dp)
    return out_p


def _phase(mod, u: np.ndarray):
    v = u.copy()
    mod.nonlinear_phase(v, 1e-3, 4.0)
    return v


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--radial-steps", type=int, default=20000)
    p.add_argument("--grid", type=int, default=2**18)
    args = p.parse_args()

    if _kernels is None:
        print("compiled extension not available; only the fallback is timed")
    rng = np.random.default_rng(0)
    u = rng.standard_normal(args.grid) + 1j * rng.standard_normal(args.grid)
    cases = {
        f"rk4_radial (n={args.radial_steps})": lambda m: _radial(m, args.radial_steps),
        f"nonlinear_phase (n={args.grid})": lambda m: _phase(m, u),
    }
    print(f"{'kernel':36s} {'python [s]':>12s} {'cython [s]':>12s} {'speed-up':>9s} {'max dev':>10s}")
    for name, fn in cases.items():
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{name:36s} {t_py:12.4g} {'-':>12s} {'-':>9s} {'-':>10s}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat))
        dev = float(np.max(np.abs(fn(_fallback) - fn(_kernels))))
        print(f"{name:36s} {t_py:12.4g} {t_cy:12.4g} {t_py / t_cy:9.1f} {dev:10.2e}")


if __name__ == "__main__":
    main()
