# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: same contracts as coreseg.kernels._numpy_backend."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d(double[:, :, ::1] x, double[:, :, :, ::1] weights,
           double[::1] bias, int stride, int padding):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = weights.shape[0], kh = weights.shape[2], kw = weights.shape[3]
    cdef Py_ssize_t oh = (H + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t ow = (W + 2 * padding - kw) // stride + 1
    out_arr = np.empty((O, oh, ow), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, c, y, xx, i, j, sy, sx
    cdef double acc
    for o in range(O):
        for y in range(oh):
            for xx in range(ow):
                acc = bias[o]
                for c in range(C):
                    for i in range(kh):
                        sy = y * stride + i - padding
                        if sy < 0 or sy >= H:
                            continue
                        for j in range(kw):
                            sx = xx * stride + j - padding
                            if sx < 0 or sx >= W:
                                continue
                            acc += weights[o, c, i, j] * x[c, sy, sx]
                out[o, y, xx] = acc
    return out_arr


def maxpool(double[:, :, ::1] x, int window, int stride):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t oh = (H - window) // stride + 1
    cdef Py_ssize_t ow = (W - window) // stride + 1
    out_arr = np.empty((C, oh, ow), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, y, xx, i, j
    cdef double best, v
    for c in range(C):
        for y in range(oh):
            for xx in range(ow):
                best = x[c, y * stride, xx * stride]
                for i in range(window):
                    for j in range(window):
                        v = x[c, y * stride + i, xx * stride + j]
                        if v > best:
                            best = v
                out[c, y, xx] = best
    return out_arr


def bilinear_resize(double[:, :, ::1] x, Py_ssize_t target_h, Py_ssize_t target_w):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    out_arr = np.empty((C, target_h, target_w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, y, xx, y0, y1, x0, x1
    cdef double sy, sx, fy, fx, top, bot
    for y in range(target_h):
        sy = (y + 0.5) * (<double>H / target_h) - 0.5
        if sy < 0.0:
            sy = 0.0
        if sy > H - 1.0:
            sy = H - 1.0
        y0 = <Py_ssize_t>sy
        y1 = y0 + 1 if y0 + 1 < H else H - 1
        fy = sy - y0
        for xx in range(target_w):
            sx = (xx + 0.5) * (<double>W / target_w) - 0.5
            if sx < 0.0:
                sx = 0.0
            if sx > W - 1.0:
                sx = W - 1.0
            x0 = <Py_ssize_t>sx
            x1 = x0 + 1 if x0 + 1 < W else W - 1
            fx = sx - x0
            for c in range(C):
                top = x[c, y0, x0] * (1 - fx) + x[c, y0, x1] * fx
                bot = x[c, y1, x0] * (1 - fx) + x[c, y1, x1] * fx
                out[c, y, xx] = top * (1 - fy) + bot * fy
    return out_arr
