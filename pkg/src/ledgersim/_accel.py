"""Optional numba acceleration.

The hot propagation kernel exists twice: a numba ``@njit`` loop and a
vectorized numpy version. Both produce identical output. Numba is used when it
is importable unless ``LEDGERSIM_DISABLE_NUMBA`` is set to a truthy value.
"""

from __future__ import annotations

import os

DISABLE_FLAG = "LEDGERSIM_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

NUMBA_AVAILABLE = numba is not None
NUMBA_DISABLED = os.environ.get(DISABLE_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = NUMBA_AVAILABLE and not NUMBA_DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise an identity decorator."""
    if NUMBA_AVAILABLE:
        return numba.njit(*args, **kwargs)

    def wrapper(f):
        return f

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrapper


def default_backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def resolve_backend(backend: str | None) -> str:
    if backend is None or backend == "auto":
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}; expected 'numba', 'numpy' or 'auto'")
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend
