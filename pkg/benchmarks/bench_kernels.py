"""Compare the compiled kernels with the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--N 12] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from qmilearn._core import _fallback

try:
    from qmilearn._core import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(N):
    basis = np.ascontiguousarray(_fallback.sector_basis(N, N // 2))
    h = np.random.default_rng(0).uniform(-1, 1, N)
    rng = np.random.default_rng(1)
    psi = rng.normal(size=(42, len(basis))) + 1j * rng.normal(size=(42, len(basis)))
    psi = np.ascontiguousarray(psi / np.linalg.norm(psi, axis=1, keepdims=True))
    return {
        "sector_basis": lambda m: m.sector_basis(N, N // 2),
        "sector_hamiltonian": lambda m: m.sector_hamiltonian(basis, N, 1.0, h),
        "pair_moments (42 states)": lambda m: m.pair_moments(psi, basis, N),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not available; rebuild with `pip install -e . --no-build-isolation`")
        return
    print(f"N={args.N}, sector dimension {len(_fallback.sector_basis(args.N, args.N // 2))}")
    print(f"{'kernel':32s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases(args.N).items():
        t_c = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        t_p = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_c:10.3f} {t_p:10.3f} {t_p / t_c:8.1f}x")


if __name__ == "__main__":
    main()
