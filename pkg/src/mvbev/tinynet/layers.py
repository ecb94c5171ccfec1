"""Single-sample conv2d via im2col, with its exact backward."""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def conv_out_size(n: int, k: int, stride: int, dilation: int, pad: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, dilation: int, pad: int) -> np.ndarray:
    """(C, H, W) -> (C*k*k, OH*OW)."""
    C, H, W = x.shape
    OH = conv_out_size(H, k, stride, dilation, pad)
    OW = conv_out_size(W, k, stride, dilation, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((C, k, k, OH, OW), dtype=x.dtype)
    for ky in range(k):
        y0 = ky * dilation
        for kx in range(k):
            x0 = kx * dilation
            cols[:, ky, kx] = xp[:, y0:y0 + stride * (OH - 1) + 1:stride, x0:x0 + stride * (OW - 1) + 1:stride]
    return cols.reshape(C * k * k, OH * OW)


def col2im(dcols: np.ndarray, x_shape, k: int, stride: int, dilation: int, pad: int) -> np.ndarray:
    C, H, W = x_shape
    OH = conv_out_size(H, k, stride, dilation, pad)
    OW = conv_out_size(W, k, stride, dilation, pad)
    d = dcols.reshape(C, k, k, OH, OW)
    dxp = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=dcols.dtype)
    for ky in range(k):
        y0 = ky * dilation
        for kx in range(k):
            x0 = kx * dilation
            dxp[:, y0:y0 + stride * (OH - 1) + 1:stride, x0:x0 + stride * (OW - 1) + 1:stride] += d[:, ky, kx]
    return dxp[:, pad:pad + H, pad:pad + W]


def conv2d(x, w, b, stride=1, dilation=1, pad=None):
    """Returns (output (Cout, OH, OW), cols) where cols is kept for the backward pass."""
    cout, cin, k, _ = w.shape
    if x.shape[0] != cin:
        raise ValueError(f"conv expects {cin} input channels, got {x.shape[0]}")
    if pad is None:
        pad = dilation * (k - 1) // 2
    cols = im2col(x, k, stride, dilation, pad)
    OH = conv_out_size(x.shape[1], k, stride, dilation, pad)
    OW = conv_out_size(x.shape[2], k, stride, dilation, pad)
    out = w.reshape(cout, -1) @ cols
    out += b[:, None]
    return out.reshape(cout, OH, OW), cols


def conv2d_backward(dout, cols, w, x_shape, stride=1, dilation=1, pad=None, need_dx=True):
    cout, cin, k, _ = w.shape
    if pad is None:
        pad = dilation * (k - 1) // 2
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    dx = None
    if need_dx:
        dx = col2im(w.reshape(cout, -1).T @ d2, x_shape, k, stride, dilation, pad)
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    return expit(x)
