"""Numba switch.

Set ``OSVILAB_NUMBA=0`` to force the pure-numpy kernels. The flag is read
once at import time.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("OSVILAB_NUMBA", "1").lower() not in ("0", "false", "no")


def njit(func):
    """``numba.njit(cache=True)`` or a passthrough when numba is off."""
    if numba is None:  # pragma: no cover
        return func
    return numba.njit(cache=True)(func)
