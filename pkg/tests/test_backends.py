"""Numba and numpy kernel backends agree on values (not bits) for all three
convolution primitives."""

import numpy as np
import pytest

from discgen import kernels


needs_both = pytest.mark.skipif(
    "numba" not in kernels.available_backends(),
    reason="numba backend unavailable",
)


@needs_both
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-4), (np.float64, 1e-12)])
def test_backends_agree(dtype, tol):
    rng = np.random.default_rng(0)
    original = kernels.active_backend()
    try:
        for _ in range(10):
            stride = int(rng.integers(1, 3))
            pad = int(rng.integers(0, 2))
            khw = int(rng.integers(2, 5))
            h = int(rng.integers(khw, 12))
            w = int(rng.integers(khw, 12))
            n, c, f = (int(rng.integers(1, 4)) for _ in range(3))
            x = rng.normal(size=(n, c, h, w)).astype(dtype)
            k = rng.normal(size=(f, c, khw, khw)).astype(dtype)
            ho = (h + 2 * pad - khw) // stride + 1
            wo = (w + 2 * pad - khw) // stride + 1
            dy = rng.normal(size=(n, f, ho, wo)).astype(dtype)

            results = {}
            for name in ("numpy", "numba"):
                kernels.set_backend(name)
                results[name] = (
                    kernels.conv2d_forward(x, k, stride, pad),
                    kernels.conv2d_backward_input(dy, k, stride, pad, h, w),
                    kernels.conv2d_backward_kernel(x, dy, stride, pad, khw, khw),
                )
            for a, b in zip(results["numpy"], results["numba"]):
                np.testing.assert_allclose(a, b, rtol=tol, atol=tol)
    finally:
        kernels.set_backend(original)


@needs_both
def test_each_backend_is_self_deterministic():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 10, 10)).astype(np.float32)
    k = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    original = kernels.active_backend()
    try:
        for name in kernels.available_backends():
            kernels.set_backend(name)
            a = kernels.conv2d_forward(x, k, 2, 1)
            b = kernels.conv2d_forward(x, k, 2, 1)
            np.testing.assert_array_equal(a, b)
    finally:
        kernels.set_backend(original)
