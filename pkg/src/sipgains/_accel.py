"""Acceleration switch.

Hot kernels are written once as plain numpy-compatible Python and compiled
with ``numba.njit`` when numba is importable and ``SIPGAINS_NUMBA`` is not
set to ``0``.  Otherwise the pure-numpy path runs.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

HAVE_NUMBA = numba is not None


def _flag_enabled() -> bool:
    value = os.environ.get("SIPGAINS_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _flag_enabled()


def njit(fn):
    """Compile ``fn`` with numba when available, regardless of the env flag.

    Callers decide whether to use the compiled or the original function.
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=False, nogil=True)(fn)


def worker_count() -> int:
    """Number of worker threads from ``SIPGAINS_THREADS`` (0 = auto, default 1)."""
    raw = os.environ.get("SIPGAINS_THREADS", "1").strip()
    try:
        n = int(raw)
    except ValueError:
        n = 1
    if n <= 0:
        n = os.cpu_count() or 1
    return n
