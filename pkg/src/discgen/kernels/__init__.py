"""Hot convolution kernels with a numba backend and a pure-numpy fallback.

The three primitives here (forward correlation, gradient w.r.t. input,
gradient w.r.t. kernel) carry essentially all of the training compute.
Transposed convolution is expressed through the same three functions with
the argument roles swapped, so adjointness holds by construction.

Backend selection: ``DISCGEN_BACKEND`` env var (``auto``, ``numba`` or
``numpy``; default ``auto`` picks numba when importable). Both backends are
deterministic; they are not bit-identical to each other because summation
order differs. ``benchmarks/bench_kernels.py`` compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_kernels

_IMPLS = {"numpy": numpy_kernels}
try:
    from . import numba_kernels

    _IMPLS["numba"] = numba_kernels
    _NUMBA_IMPORT_ERROR = None
except ImportError as exc:  # pragma: no cover - depends on environment
    _NUMBA_IMPORT_ERROR = exc

_requested = os.environ.get("DISCGEN_BACKEND", "auto")
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"DISCGEN_BACKEND must be auto|numba|numpy, got {_requested!r}")
if _requested == "numba" and "numba" not in _IMPLS:
    raise ImportError(
        f"DISCGEN_BACKEND=numba but numba is unavailable: {_NUMBA_IMPORT_ERROR}"
    )

_active = _requested if _requested != "auto" else ("numba" if "numba" in _IMPLS else "numpy")


def active_backend() -> str:
    return _active


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def set_backend(name: str) -> None:
    """Switch the kernel backend at runtime (used by tests and benchmarks)."""
    global _active
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} not available, have {sorted(_IMPLS)}")
    _active = name


def conv2d_forward(x: np.ndarray, k: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Strided cross-correlation of x[N,C,H,W] with k[F,C,kh,kw] -> [N,F,Ho,Wo]."""
    return _IMPLS[_active].conv2d_forward(x, k, stride, pad)


def conv2d_backward_input(
    dy: np.ndarray, k: np.ndarray, stride: int, pad: int, in_h: int, in_w: int
) -> np.ndarray:
    """Adjoint of conv2d_forward w.r.t. its input; also the transposed-conv forward."""
    return _IMPLS[_active].conv2d_backward_input(dy, k, stride, pad, in_h, in_w)


def conv2d_backward_kernel(
    x: np.ndarray, dy: np.ndarray, stride: int, pad: int, kh: int, kw: int
) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. the kernel: [F,C,kh,kw]."""
    return _IMPLS[_active].conv2d_backward_kernel(x, dy, stride, pad, kh, kw)
