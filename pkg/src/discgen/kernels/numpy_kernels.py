"""Vectorized numpy fallback for the convolution kernels.

Loops only over the kh*kw kernel offsets; each iteration is a strided view
plus one einsum contraction, so the fallback stays usable for training when
numba is unavailable.
"""

from __future__ import annotations

import numpy as np


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x: np.ndarray, k: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = _pad(x, pad)
    out = np.zeros((n, f, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                       j : j + stride * (wo - 1) + 1 : stride]
            out += np.einsum("nchw,fc->nfhw", patch, k[:, :, i, j], optimize=True)
    return out


def conv2d_backward_input(
    dy: np.ndarray, k: np.ndarray, stride: int, pad: int, in_h: int, in_w: int
) -> np.ndarray:
    n, f, ho, wo = dy.shape
    _, c, kh, kw = k.shape
    dxp = np.zeros((n, c, in_h + 2 * pad, in_w + 2 * pad), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("nfhw,fc->nchw", dy, k[:, :, i, j], optimize=True)
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                j : j + stride * (wo - 1) + 1 : stride] += contrib
    if pad == 0:
        return dxp
    return dxp[:, :, pad : pad + in_h, pad : pad + in_w]


def conv2d_backward_kernel(
    x: np.ndarray, dy: np.ndarray, stride: int, pad: int, kh: int, kw: int
) -> np.ndarray:
    n, c, h, w = x.shape
    f = dy.shape[1]
    ho, wo = dy.shape[2], dy.shape[3]
    xp = _pad(x, pad)
    dk = np.zeros((f, c, kh, kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                       j : j + stride * (wo - 1) + 1 : stride]
            dk[:, :, i, j] = np.einsum("nchw,nfhw->fc", patch, dy, optimize=True)
    return dk
