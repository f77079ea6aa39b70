"""Optional numba acceleration.

Set ``HIERPART_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""
import os

_DISABLED = os.environ.get("HIERPART_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def jit(fn):
    """Compile ``fn`` with numba when enabled, else return ``None``."""
    if not HAVE_NUMBA:
        return None
    return _njit(cache=True, nogil=True)(fn)
