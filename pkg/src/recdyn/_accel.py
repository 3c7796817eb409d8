"""Backend selection for the compiled kernels.

Set ``RECDYN_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba
cannot be imported the numpy path is used as well.
"""
import os

_DISABLED = os.environ.get("RECDYN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
