"""Compiled kernels for the hot detection loops, with pure-python fallbacks."""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba present in the supported env
    numba = None
    HAVE_NUMBA = False


def _conefree_flags_py(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Maintains the stack of candidate pinning times; an index is pinched as
    # soon as any earlier index dominates the whole stretch up to it, and the
    # surviving candidates are totally ordered, so pops only hit a suffix.
    n = x.shape[0]
    flags = np.zeros(n, dtype=bool)
    flags[0] = True
    stack = np.empty(n, dtype=np.int64)
    top = -1
    for u in range(1, n):
        top += 1
        stack[top] = u - 1
        while top >= 0:
            t = stack[top]
            if x[t] < x[u] and y[t] < y[u]:
                break
            top -= 1
        flags[u] = top < 0
    return flags


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _conefree_flags_nb(x, y):  # pragma: no cover - exercised via wrapper
        n = x.shape[0]
        flags = np.zeros(n, dtype=numba.boolean)
        flags[0] = True
        stack = np.empty(n, dtype=np.int64)
        top = -1
        for u in range(1, n):
            top += 1
            stack[top] = u - 1
            while top >= 0:
                t = stack[top]
                if x[t] < x[u] and y[t] < y[u]:
                    break
                top -= 1
            flags[u] = top < 0
        return flags

    def conefree_flags(x, y):
        return np.asarray(_conefree_flags_nb(np.ascontiguousarray(x), np.ascontiguousarray(y)))

else:  # pragma: no cover

    def conefree_flags(x, y):
        return _conefree_flags_py(np.asarray(x), np.asarray(y))


def backward_cone_flags(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices where both coordinates sit strictly below all earlier values."""
    n = x.shape[0]
    px = np.empty(n)
    py = np.empty(n)
    px[0] = np.inf
    py[0] = np.inf
    np.minimum.accumulate(x[:-1], out=px[1:])
    np.minimum.accumulate(y[:-1], out=py[1:])
    flags = (x < px) & (y < py)
    flags[0] = True
    return flags
