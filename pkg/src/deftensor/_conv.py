"""im2col convolution and max-pooling kernels on NCHW float64 arrays."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def pair(v) -> tuple:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"kernel {kernel} larger than padded input {size + 2 * padding}"
        )
    return out


def _pad(x, padding):
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def windows(x, kernel, stride, padding):
    """Strided ``(N, C, Ho, Wo, kh, kw)`` view over the padded input."""
    kh, kw = kernel
    sh, sw = stride
    output_size(x.shape[2], kh, sh, padding[0])
    output_size(x.shape[3], kw, sw, padding[1])
    win = sliding_window_view(_pad(x, padding), (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def im2col(x, kernel, stride, padding):
    win = windows(x, kernel, stride, padding)
    n, c, ho, wo, kh, kw = win.shape
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, (n, ho, wo)


def conv2d(x, w, stride=(1, 1), padding=(0, 0)):
    """Cross-correlation of ``x (N, C, H, W)`` with ``w (F, C, kh, kw)``."""
    stride, padding = pair(stride), pair(padding)
    f, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {c}")
    cols, (n, ho, wo) = im2col(x, (kh, kw), stride, padding)
    out = cols @ w.reshape(f, -1).T
    return out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)


def conv2d_backward(g, x, w, stride=(1, 1), padding=(0, 0), need_input=True, need_weight=True):
    """Gradients of :func:`conv2d` with respect to its input and kernel."""
    stride, padding = pair(stride), pair(padding)
    f, c, kh, kw = w.shape
    n, _, ho, wo = g.shape
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
    gw = gx = None
    if need_weight:
        cols, _ = im2col(x, (kh, kw), stride, padding)
        gw = (g2.T @ cols).reshape(w.shape)
    if need_input:
        gcols = (g2 @ w.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
        gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
        ph, pw = padding
        sh, sw = stride
        gxp = np.zeros((n, c, x.shape[2] + 2 * ph, x.shape[3] + 2 * pw))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += gcols[
                    ..., i, j
                ]
        gx = gxp[:, :, ph : ph + x.shape[2], pw : pw + x.shape[3]]
    return gx, gw


def maxpool2d(x, kernel, stride=None):
    """Max-pooling; returns the output and flat argmax (first maximum wins)."""
    kernel = pair(kernel)
    stride = kernel if stride is None else pair(stride)
    win = windows(x, kernel, stride, (0, 0))
    n, c, ho, wo, kh, kw = win.shape
    flat = win.reshape(n, c, ho, wo, kh * kw)
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2d_backward(g, idx, x_shape, kernel, stride=None):
    kernel = pair(kernel)
    stride = kernel if stride is None else pair(stride)
    kh, kw = kernel
    sh, sw = stride
    n, c, ho, wo = g.shape
    gx = np.zeros(x_shape)
    di, dj = np.divmod(idx, kw)
    rows = np.arange(ho)[None, None, :, None] * sh + di
    cols = np.arange(wo)[None, None, None, :] * sw + dj
    nn_ = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    np.add.at(gx, (nn_, cc, rows, cols), g)
    return gx
