"""Backend selection for the hot pixel loops.

Set ``DFDSOLVE_BACKEND=numpy`` to force the pure-numpy kernels. The default
is numba when it imports, numpy otherwise.
"""
import os

try:
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the system TBB is too old for numba; avoid the warning it triggers
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def deco(fn):
            return fn
        return deco

    prange = range


def _select_backend():
    wanted = os.environ.get("DFDSOLVE_BACKEND", "").strip().lower()
    if wanted in ("", "auto"):
        return "numba" if HAVE_NUMBA else "numpy"
    if wanted not in ("numba", "numpy"):
        raise ValueError(f"DFDSOLVE_BACKEND must be 'numba' or 'numpy', got {wanted!r}")
    if wanted == "numba" and not HAVE_NUMBA:
        raise ImportError("DFDSOLVE_BACKEND=numba but numba is not installed")
    return wanted


BACKEND = _select_backend()
