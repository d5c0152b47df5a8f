"""Optional numba acceleration.

Set ``INFORL_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
Both paths execute the same source, so results agree bit for bit.
"""

import os

_DISABLED = os.environ.get("INFORL_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:
    _njit = None
    NUMBA_ENABLED = False


def njit(fn):
    """``numba.njit(cache=True)`` when available and enabled, identity otherwise."""
    if NUMBA_ENABLED:
        return _njit(cache=True)(fn)
    return fn
