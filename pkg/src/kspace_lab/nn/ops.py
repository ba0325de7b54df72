"""Forward/backward kernels on ``(N, C, H, W)`` float64 arrays.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes ``(dout, cache)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(cols: np.ndarray, shape, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add ``(N*Ho*Wo, C*k*k)`` patches back into an ``(N, C, H, W)`` array."""
    n, c, h, w = shape
    hp = (ho - 1) * stride + k
    wp = (wo - 1) * stride + k
    hp = max(hp, h + 2 * pad)
    wp = max(wp, w + 2 * pad)
    out = np.zeros((n, c, hp, wp))
    patches = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + hs : stride, j : j + ws : stride] += patches[:, :, i, j]
    return out[:, :, pad : pad + h, pad : pad + w]


def conv2d_forward(x, w, b, stride: int = 1, pad: int = 0):
    """Cross-correlation with weights ``(F, C, k, k)`` and bias ``(F,)``."""
    n = x.shape[0]
    f, _, k, _ = w.shape
    cols, ho, wo = _im2col(x, k, stride, pad)
    out = cols @ w.reshape(f, -1).T
    if b is not None:
        out += b
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, w, stride, pad, ho, wo)


def conv2d_backward(dout, cache):
    xshape, cols, w, stride, pad, ho, wo = cache
    f, _, k, _ = w.shape
    d = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (d.T @ cols).reshape(w.shape)
    db = d.sum(axis=0)
    dx = _col2im(d @ w.reshape(f, -1), xshape, k, stride, pad, ho, wo)
    return dx, dw, db


def conv_transpose2d_forward(x, w, b, stride: int = 2, pad: int = 1):
    """Transposed convolution with weights ``(C_in, C_out, k, k)``."""
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    ho = (h - 1) * stride - 2 * pad + k
    wo = (wd - 1) * stride - 2 * pad + k
    xf = x.transpose(0, 2, 3, 1).reshape(-1, cin)
    cols = xf @ w.reshape(cin, -1)
    out = _col2im(cols, (n, cout, ho, wo), k, stride, pad, h, wd)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out), (xf, x.shape, w, stride, pad)


def conv_transpose2d_backward(dout, cache):
    xf, xshape, w, stride, pad = cache
    n, cin, h, wd = xshape
    k = w.shape[2]
    cols, _, _ = _im2col(dout, k, stride, pad)
    dx = (cols @ w.reshape(cin, -1).T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2)
    dw = (xf.T @ cols).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), dw, db


def batchnorm_forward(x, gamma, beta, running=None, train: bool = True, momentum: float = 0.9, eps: float = BN_EPS):
    """Per-channel normalization.

    In training mode batch statistics are used and ``running`` (a
    ``(mean, var)`` pair of arrays) is updated in place when given.
    """
    if train:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if running is not None:
            running[0][...] = momentum * running[0] + (1 - momentum) * mu
            running[1][...] = momentum * running[1] + (1 - momentum) * var
    else:
        mu, var = running
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not train:
        return dxhat * inv[None, :, None, None], dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    dx = inv[None, :, None, None] / m * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


def leaky_relu_forward(x, slope: float = 0.2):
    out = np.where(x > 0, x, slope * x)
    return out, (x > 0, slope)


def leaky_relu_backward(dout, cache):
    pos, slope = cache
    return np.where(pos, dout, slope * dout)


def tanh_forward(x):
    out = np.tanh(x)
    return out, out


def tanh_backward(dout, cache):
    return dout * (1.0 - cache * cache)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out
