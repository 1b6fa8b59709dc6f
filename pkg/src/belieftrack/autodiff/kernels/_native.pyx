# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled spatial kernels. Mirrors kernels.reference exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, ::1] x, double[:, :, :, ::1] weight,
                   double[::1] bias, int stride, int pad):
    cdef Py_ssize_t o = weight.shape[0], c = weight.shape[1]
    cdef Py_ssize_t kh = weight.shape[2], kw = weight.shape[3]
    cdef Py_ssize_t h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    out_arr = np.empty((o, oh, ow))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t f, oy, ox, ch, i, j, iy, ix
    cdef double acc
    for f in range(o):
        for oy in range(oh):
            for ox in range(ow):
                acc = bias[f]
                for ch in range(c):
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            acc += weight[f, ch, i, j] * x[ch, iy, ix]
                out[f, oy, ox] = acc
    return out_arr


def conv2d_backward(double[:, :, ::1] x, double[:, :, :, ::1] weight,
                    double[:, :, ::1] grad_out, int stride, int pad):
    cdef Py_ssize_t o = weight.shape[0], c = weight.shape[1]
    cdef Py_ssize_t kh = weight.shape[2], kw = weight.shape[3]
    cdef Py_ssize_t h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t oh = grad_out.shape[1], ow = grad_out.shape[2]
    gx_arr = np.zeros((c, h, w))
    gw_arr = np.zeros((o, c, kh, kw))
    gb_arr = np.zeros(o)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t f, oy, ox, ch, i, j, iy, ix
    cdef double g
    for f in range(o):
        for oy in range(oh):
            for ox in range(ow):
                g = grad_out[f, oy, ox]
                gb[f] += g
                for ch in range(c):
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            gw[f, ch, i, j] += g * x[ch, iy, ix]
                            gx[ch, iy, ix] += g * weight[f, ch, i, j]
    return gx_arr, gw_arr, gb_arr


def maxpool2x2_forward(double[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t oh = (h + 1) // 2, ow = (w + 1) // 2
    out_arr = np.empty((c, oh, ow))
    idx_arr = np.empty((c, oh, ow), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t ch, oy, ox, dy, dx, iy, ix, best_pos
    cdef double best, v
    for ch in range(c):
        for oy in range(oh):
            for ox in range(ow):
                best = -np.inf
                best_pos = 0
                for dy in range(2):
                    iy = 2 * oy + dy
                    if iy >= h:
                        break
                    for dx in range(2):
                        ix = 2 * ox + dx
                        if ix >= w:
                            break
                        v = x[ch, iy, ix]
                        if v > best:  # strict: ties keep first row-major cell
                            best = v
                            best_pos = iy * w + ix
                out[ch, oy, ox] = best
                idx[ch, oy, ox] = best_pos
    return out_arr, idx_arr


def maxpool2x2_backward(x_shape, cnp.int64_t[:, :, ::1] idx, double[:, :, ::1] grad_out):
    cdef Py_ssize_t c = x_shape[0], h = x_shape[1], w = x_shape[2]
    cdef Py_ssize_t oh = idx.shape[1], ow = idx.shape[2]
    gx_arr = np.zeros((c, h * w))
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t ch, oy, ox
    for ch in range(c):
        for oy in range(oh):
            for ox in range(ow):
                gx[ch, idx[ch, oy, ox]] += grad_out[ch, oy, ox]
    return gx_arr.reshape(c, h, w)
