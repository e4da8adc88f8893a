"""Pure-numpy kernel implementations.

These are the fallback used when the compiled extension is unavailable.
Shapes are validated by the public wrappers in ``coreseg.kernels``; the
functions here assume correct, C-contiguous float64 inputs.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d(x, weights, bias, stride, padding):
    # x: (C, H, W); weights: (O, C, kh, kw); bias: (O,)
    kh, kw = weights.shape[2], weights.shape[3]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(weights, win, axes=([1, 2, 3], [0, 3, 4]))
    out += bias[:, None, None]
    return np.ascontiguousarray(out)


def maxpool(x, window, stride):
    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    return np.ascontiguousarray(win.max(axis=(3, 4)))


def _axis_coords(dst, src):
    s = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    s = np.clip(s, 0.0, src - 1.0)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, s - i0


def bilinear_resize(x, target_h, target_w):
    # x: (C, H, W) -> (C, target_h, target_w), half-pixel centers, edge clamp
    _, src_h, src_w = x.shape
    y0, y1, fy = _axis_coords(target_h, src_h)
    x0, x1, fx = _axis_coords(target_w, src_w)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    top = x[:, y0, :][:, :, x0] * (1 - fx) + x[:, y0, :][:, :, x1] * fx
    bot = x[:, y1, :][:, :, x0] * (1 - fx) + x[:, y1, :][:, :, x1] * fx
    return np.ascontiguousarray(top * (1 - fy) + bot * fy)
