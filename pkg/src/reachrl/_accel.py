"""Numba switch.

Set ``REACHRL_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. when
debugging or on platforms without an LLVM build of numba.
"""
import os

_DISABLED = os.environ.get("REACHRL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` when available, otherwise ``fn`` unchanged."""
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)
