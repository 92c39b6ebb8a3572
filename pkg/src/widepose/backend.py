"""Compute-backend selection for the hot numeric kernels.

The kernels in :mod:`widepose._kernels` are written once in a
numba-compatible NumPy subset and compiled with ``@njit`` when numba is
enabled.  The environment variable ``WIDEPOSE_NUMBA`` controls selection:

* unset or ``auto`` -- use numba when importable, else plain NumPy;
* ``0`` / ``off`` / ``false`` -- force the pure-NumPy path (no JIT);
* ``1`` / ``on`` / ``true`` -- require numba, raise if unavailable.

Both paths execute the same source, so results agree to floating-point
round-off; see ``benchmarks/backend_bench.py`` for a speed comparison.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("WIDEPOSE_NUMBA", "auto").strip().lower()
_OFF = ("0", "off", "false", "no")
_ON = ("1", "on", "true", "yes")


def _resolve() -> bool:
    if _FLAG in _OFF:
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        if _FLAG in _ON:
            raise
        return False
    return True


NUMBA_ENABLED = _resolve()


def jit_kernel(func):
    """Compile a hot kernel with numba, or return it unchanged."""
    if NUMBA_ENABLED:
        from numba import njit

        return njit(cache=True)(func)
    return func


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def warmup() -> None:
    """Trigger JIT compilation of every kernel (no-op on the NumPy path)."""
    from . import _kernels

    _kernels.warmup()
