"""Global floating-point precision switch.

Training runs at 32-bit; verification suites (finite differences, adjoint
identities) run at 64-bit because central differences are unreliable in
float32. The active precision applies to tensors created after the switch;
existing arrays keep their dtype.

Selected at import time from ``DISCGEN_PRECISION`` (``f32`` or ``f64``,
default ``f32``) and changeable at runtime via :func:`set_precision` or the
:func:`precision` context manager.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

_NAMED = {"f32": np.float32, "f64": np.float64}

_active: str = os.environ.get("DISCGEN_PRECISION", "f32")
if _active not in _NAMED:
    raise ValueError(
        f"DISCGEN_PRECISION must be one of {sorted(_NAMED)}, got {_active!r}"
    )


def precision_name() -> str:
    """Name of the active precision, ``f32`` or ``f64``."""
    return _active


def default_dtype() -> type:
    """Numpy scalar type for the active precision."""
    return _NAMED[_active]


def set_precision(name: str) -> None:
    global _active
    if name not in _NAMED:
        raise ValueError(f"precision must be one of {sorted(_NAMED)}, got {name!r}")
    _active = name


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the global precision."""
    previous = _active
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)
