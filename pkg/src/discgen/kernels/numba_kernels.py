"""Numba-compiled convolution kernels.

Each kernel decomposes the convolution over the kh*kw kernel offsets: a
gather of the strided input patch into a contiguous matrix, one BLAS GEMM
per offset, and a scatter back. No fastmath and a fixed offset order, so
repeated runs are bit-identical. Kernels specialize per dtype.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _gather_patches(xp, stride, ki, kj, n, ho, wo, P):
    c = xp.shape[1]
    idx = 0
    for ni in range(n):
        for oi in range(ho):
            base_i = oi * stride + ki
            for oj in range(wo):
                base_j = oj * stride + kj
                for ci in range(c):
                    P[idx, ci] = xp[ni, ci, base_i, base_j]
                idx += 1


@njit(cache=True)
def _conv2d_forward(xp, k, out, stride):
    n, f, ho, wo = out.shape
    c = xp.shape[1]
    kh, kw = k.shape[2], k.shape[3]
    rows = n * ho * wo
    P = np.empty((rows, c), dtype=xp.dtype)
    W = np.empty((c, f), dtype=xp.dtype)
    acc = np.zeros((rows, f), dtype=xp.dtype)
    for ki in range(kh):
        for kj in range(kw):
            _gather_patches(xp, stride, ki, kj, n, ho, wo, P)
            for ci in range(c):
                for fi in range(f):
                    W[ci, fi] = k[fi, ci, ki, kj]
            acc += np.dot(P, W)
    idx = 0
    for ni in range(n):
        for oi in range(ho):
            for oj in range(wo):
                for fi in range(f):
                    out[ni, fi, oi, oj] = acc[idx, fi]
                idx += 1


@njit(cache=True)
def _flatten_upstream(dy):
    n, f, ho, wo = dy.shape
    D = np.empty((n * ho * wo, f), dtype=dy.dtype)
    idx = 0
    for ni in range(n):
        for oi in range(ho):
            for oj in range(wo):
                for fi in range(f):
                    D[idx, fi] = dy[ni, fi, oi, oj]
                idx += 1
    return D


@njit(cache=True)
def _conv2d_backward_input(dy, k, dxp, stride):
    n, f, ho, wo = dy.shape
    c = dxp.shape[1]
    kh, kw = k.shape[2], k.shape[3]
    D = _flatten_upstream(dy)
    W = np.empty((f, c), dtype=dy.dtype)
    for ki in range(kh):
        for kj in range(kw):
            for fi in range(f):
                for ci in range(c):
                    W[fi, ci] = k[fi, ci, ki, kj]
            G = np.dot(D, W)  # [rows, c]
            idx = 0
            for ni in range(n):
                for oi in range(ho):
                    base_i = oi * stride + ki
                    for oj in range(wo):
                        base_j = oj * stride + kj
                        for ci in range(c):
                            dxp[ni, ci, base_i, base_j] += G[idx, ci]
                        idx += 1


@njit(cache=True)
def _conv2d_backward_kernel(xp, dy, dk, stride):
    n, f, ho, wo = dy.shape
    c = xp.shape[1]
    kh, kw = dk.shape[2], dk.shape[3]
    rows = n * ho * wo
    D = _flatten_upstream(dy)
    Dt = np.empty((f, rows), dtype=dy.dtype)
    for idx in range(rows):
        for fi in range(f):
            Dt[fi, idx] = D[idx, fi]
    P = np.empty((rows, c), dtype=xp.dtype)
    for ki in range(kh):
        for kj in range(kw):
            _gather_patches(xp, stride, ki, kj, n, ho, wo, P)
            G = np.dot(Dt, P)  # [f, c]
            for fi in range(f):
                for ci in range(c):
                    dk[fi, ci, ki, kj] = G[fi, ci]


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.ascontiguousarray(x)
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + h, pad : pad + w] = x
    return xp


def conv2d_forward(x: np.ndarray, k: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo), dtype=x.dtype)
    _conv2d_forward(_pad(x, pad), np.ascontiguousarray(k), out, stride)
    return out


def conv2d_backward_input(
    dy: np.ndarray, k: np.ndarray, stride: int, pad: int, in_h: int, in_w: int
) -> np.ndarray:
    n = dy.shape[0]
    c = k.shape[1]
    dxp = np.zeros((n, c, in_h + 2 * pad, in_w + 2 * pad), dtype=dy.dtype)
    _conv2d_backward_input(np.ascontiguousarray(dy), np.ascontiguousarray(k), dxp, stride)
    if pad == 0:
        return dxp
    return np.ascontiguousarray(dxp[:, :, pad : pad + in_h, pad : pad + in_w])


def conv2d_backward_kernel(
    x: np.ndarray, dy: np.ndarray, stride: int, pad: int, kh: int, kw: int
) -> np.ndarray:
    f = dy.shape[1]
    c = x.shape[1]
    dk = np.zeros((f, c, kh, kw), dtype=x.dtype)
    _conv2d_backward_kernel(_pad(x, pad), np.ascontiguousarray(dy), dk, stride)
    return dk
