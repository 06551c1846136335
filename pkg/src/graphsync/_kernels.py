"""Backend selection for the hot enumeration kernel.

The compiled Cython extension is used when present; setting
``GRAPHSYNC_PURE_PYTHON=1`` (or a failed build) selects the numpy fallback.
Both backends implement the identical ``fill_logweights`` contract and are
cross-checked in the test suite and compared in ``benchmarks/``.
"""

from __future__ import annotations

import os

from . import _pykernels

_FORCE_PURE = os.environ.get("GRAPHSYNC_PURE_PYTHON") == "1"

if not _FORCE_PURE:
    try:
        from . import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build environment
        _impl = _pykernels
        BACKEND = "pure-python"
else:
    _impl = _pykernels
    BACKEND = "pure-python"

fill_logweights = _impl.fill_logweights
fill_logweights_pure = _pykernels.fill_logweights


def backend() -> str:
    """Name of the active kernel backend."""
    return BACKEND
