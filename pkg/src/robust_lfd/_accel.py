"""Backend switch for the compiled inner loops.

Set ``ROBUST_LFD_BACKEND=numpy`` to run the pure-numpy/Python fallback
instead of the numba-compiled kernels.  The variable is read once at import.
"""
import os

BACKEND = os.environ.get("ROBUST_LFD_BACKEND", "numba").strip().lower()

if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"ROBUST_LFD_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

if BACKEND == "numba":
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a hard dependency
        BACKEND = "numpy"

USE_NUMBA = BACKEND == "numba"


def maybe_njit(func):
    """Compile ``func`` with numba when the numba backend is active."""
    if USE_NUMBA:
        return _njit(cache=True, nogil=True)(func)
    return func
