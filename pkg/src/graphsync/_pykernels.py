"""Pure numpy fallback for the compiled enumeration kernel.

Same contract as ``graphsync._ckernels``: configurations in lexicographic
order, vertex 0 most significant.  Works in chunks so the digit tables stay
cache-sized; digit tables are memoized per (m, q, chunk) shape.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 1 << 16
_digit_cache: dict[tuple[int, int, int], np.ndarray] = {}


def _digits(m: int, q: int, size: int) -> np.ndarray:
    """(size, m) table of the trailing digits of 0..size-1 in base q."""
    key = (m, q, size)
    tab = _digit_cache.get(key)
    if tab is None:
        idx = np.arange(size, dtype=np.int64)
        tab = np.empty((size, m), dtype=np.int64)
        for i in range(m):
            tab[:, m - 1 - i] = (idx // q**i) % q
        _digit_cache[key] = tab
    return tab


def fill_logweights(unary, eu, ev, elogq, out):
    unary = np.asarray(unary, dtype=np.float64)
    eu = np.asarray(eu)
    ev = np.asarray(ev)
    elogq = np.asarray(elogq, dtype=np.float64)
    m, q = unary.shape
    total = out.shape[0]
    if m == 0:
        out[0] = elogq[:, 0, 0].sum() if elogq.size else 0.0
        return
    nedges = eu.shape[0]
    flat = elogq.reshape(nedges, q * q) if nedges else None
    start = 0
    while start < total:
        stop = min(start + _CHUNK, total)
        size = stop - start
        if start == 0 and size == total:
            dig = _digits(m, q, size)
        else:
            idx = np.arange(start, stop, dtype=np.int64)
            dig = np.empty((size, m), dtype=np.int64)
            for i in range(m):
                dig[:, m - 1 - i] = (idx // q**i) % q
        acc = np.zeros(size, dtype=np.float64)
        for i in range(m):
            acc += unary[i, dig[:, i]]
        for e in range(nedges):
            acc += flat[e, dig[:, eu[e]] * q + dig[:, ev[e]]]
        out[start:stop] = acc
        start = stop
