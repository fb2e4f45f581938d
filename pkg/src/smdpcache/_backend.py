"""Backend selection for the numeric kernels.

Set ``SMDPCACHE_NUMBA=0`` before import to force the pure-numpy path.
"""

import os

_FLAG = os.environ.get("SMDPCACHE_NUMBA", "1").strip().lower()

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("0", "false", "no", "off")

BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(fn, fastmath=False):
    """Compile ``fn`` with numba, or raise if numba is missing."""
    if not NUMBA_AVAILABLE:
        raise ImportError("numba is not installed")
    return numba.njit(cache=True, nogil=True, fastmath=fastmath)(fn)
