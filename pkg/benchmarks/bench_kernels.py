"""Time the numba and numpy PSF kernels against each other.

    python benchmarks/bench_kernels.py --sizes 64 128 --repeat 5

Both backends are imported side by side, so DFDSOLVE_BACKEND does not matter
here. The first numba call (compilation) is excluded from the timings.
"""
import argparse
import timeit

import numpy as np

from dfdsolve import _kernels


def cases(size, rng):
    img = rng.random((size, size, 3))
    sig = rng.uniform(0.0, 6.0, (size, size))
    g = rng.random((size, size, 3))
    return {
        "render": lambda impl: impl[0](img, sig, 3, 1.0),
        "adjoint": lambda impl: impl[1](g, sig, 3, 1.0),
        "grad_sigma": lambda impl: impl[2](img, sig, g, 3, 1.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if "numba" not in _kernels.IMPLS:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    numpy_impl, numba_impl = _kernels.IMPLS["numpy"], _kernels.IMPLS["numba"]

    print(f"{'kernel':<11} {'size':>5} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>9}")
    for size in args.sizes:
        for name, run in cases(size, rng).items():
            ref = run(numpy_impl)
            out = run(numba_impl)  # also triggers compilation
            diff = float(np.max(np.abs(ref - out)))
            t_np = min(timeit.repeat(lambda: run(numpy_impl), number=1, repeat=args.repeat))
            t_nb = min(timeit.repeat(lambda: run(numba_impl), number=1, repeat=args.repeat))
            print(f"{name:<11} {size:>5} {1e3 * t_np:>10.2f} {1e3 * t_nb:>10.2f} {t_np / t_nb:>7.1f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
