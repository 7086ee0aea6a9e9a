"""Optional numba acceleration.

Kernels are written once against the numpy API and decorated with
:func:`kernel`.  When numba is importable and ``MIGDYN_DISABLE_NUMBA`` is not
set, they are compiled with ``numba.njit``; otherwise the very same source runs
as plain numpy code.  The flag is read once, at import time.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None

_FLAG = "MIGDYN_DISABLE_NUMBA"

NUMBA_DISABLED_BY_ENV = os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}
NUMBA_ENABLED = numba is not None and not NUMBA_DISABLED_BY_ENV


def kernel(func=None, **options):
    """Decorate a numeric kernel; compiles with ``njit`` when enabled."""

    def decorate(f):
        if NUMBA_ENABLED:
            options.setdefault("cache", True)
            return numba.njit(**options)(f)
        return f

    if func is not None:
        return decorate(func)
    return decorate


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
