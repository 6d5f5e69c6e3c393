"""Numba/NumPy backend selection for the hot numeric kernels.

Every performance-critical kernel in this package exists twice: a
vectorized pure-NumPy implementation (the reference) and a fused
numba-compiled implementation. Which one runs is decided here.

Selection order:
  1. ``set_backend()`` / ``force_backend()`` calls (tests, benchmarks),
  2. the ``MBTRACK_BACKEND`` environment variable (``numpy`` or ``numba``),
  3. default: numba when importable, numpy otherwise.
"""

from __future__ import annotations

import contextlib
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on bare installs
    numba = None
    HAVE_NUMBA = False

_ENV_VAR = "MBTRACK_BACKEND"
_forced: str | None = None


def _env_choice() -> str | None:
    raw = os.environ.get(_ENV_VAR, "").strip().lower()
    if raw in ("numpy", "numba"):
        return raw
    return None


def backend_name() -> str:
    """Name of the backend that will run the next kernel call."""
    choice = _forced or _env_choice()
    if choice == "numba" and not HAVE_NUMBA:
        raise RuntimeError("MBTRACK_BACKEND=numba but numba is not installed")
    if choice is not None:
        return choice
    return "numba" if HAVE_NUMBA else "numpy"


def numba_enabled() -> bool:
    return backend_name() == "numba"


def set_backend(name: str | None) -> None:
    """Force a backend (``'numpy'`` / ``'numba'``), or ``None`` to restore defaults."""
    global _forced
    if name is not None and name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}")
    _forced = name


@contextlib.contextmanager
def force_backend(name: str):
    """Temporarily force a backend inside a ``with`` block."""
    previous = _forced
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def njit(*args, **kwargs):
    """``numba.njit`` when numba is present, identity decorator otherwise.

    Compilation is unconditional; dispatch between the compiled and the
    NumPy twin happens at call sites via :func:`numba_enabled`.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def deco(fn):
        return fn

    return deco
