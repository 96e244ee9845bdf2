"""Compare the compiled kernels with the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on the
same inputs in both backends and the results are checked to agree.
"""

import argparse
import timeit

import numpy as np

from optspline.kernels import _pykernels

try:
    from optspline.kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(n_steps):
    rng = np.random.default_rng(0)
    A = np.array([[0.0, 1.0], [-4.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    noise = rng.standard_normal((n_steps, 1))
    accel = rng.standard_normal(n_steps)
    a = rng.normal(size=n_steps // 10)
    b = rng.normal(size=n_steps // 10)
    s = rng.uniform(0.01, 1.0, size=n_steps // 10)
    return {
        "linear_em": (A, B, np.array([1.0, 0.0]), noise, 1e-3),
        "paper_verlet": (np.array([10.0, 0.0]), accel, 1e-2),
        "odd_power_moments": (a, b, s, 1.0 / 3.0),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=20000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; only the fallback can run")
    print(f"{'kernel':<20}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, call_args in cases(args.steps).items():
        py = getattr(_pykernels, name)
        t_py = min(timeit.repeat(lambda: py(*call_args), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{name:<20}{t_py:>12.4f}{'-':>12}{'-':>10}")
            continue
        cy = getattr(_ckernels, name)
        np.testing.assert_allclose(cy(*call_args), py(*call_args), rtol=1e-12, atol=1e-12)
        t_cy = min(timeit.repeat(lambda: cy(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<20}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>10.1f}")


if __name__ == "__main__":
    main()
