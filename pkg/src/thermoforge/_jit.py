"""Optional numba acceleration.

Set ``THERMOFORGE_DISABLE_NUMBA=1`` to force the pure-numpy code paths
(useful for debugging and for the kernel benchmark).
"""
from __future__ import annotations

import os

_FLAG = "THERMOFORGE_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and _numba_requested()


def njit(func):
    """Compile ``func`` in nopython mode when available, else return it untouched."""
    if NUMBA_AVAILABLE:
        return _numba.njit(cache=True)(func)
    return func


def set_threads(n: int | None) -> None:
    if n is None or not NUMBA_AVAILABLE:
        return
    _numba.set_num_threads(max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS)))
