"""Backend selection for the hot numeric kernels.

Set ``MRENET_BACKEND=numpy`` to force the pure-numpy code paths; the
default uses numba when it can be imported.
"""

import os
import warnings

BACKEND_ENV = "MRENET_BACKEND"

_requested = os.environ.get(BACKEND_ENV, "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

if _requested == "numba" and not HAS_NUMBA:  # pragma: no cover
    warnings.warn("numba is not available; falling back to numpy kernels", RuntimeWarning)

USE_NUMBA = HAS_NUMBA and _requested == "numba"


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged.

    The compiled function is always built (when numba imports) so tests and
    benchmarks can compare both paths regardless of ``USE_NUMBA``.
    """
    if not HAS_NUMBA:  # pragma: no cover
        return func
    return numba.njit(cache=True, nogil=True)(func)
