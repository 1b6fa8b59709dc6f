"""Numpy implementations of the spatial kernels.

These are the fallback used when the compiled extension is unavailable and
the ground truth the extension is tested against. All arrays are float64;
convolution uses zero padding and the pooling is 2x2/stride-2 with ceil
semantics (ragged edge windows are clipped to the valid region).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    # returns (oh*ow, c*kh*kw) patch matrix
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, oh, ow = win.shape[:3]
    return win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw), oh, ow


def conv2d_forward(x, weight, bias, stride, pad):
    o, c, kh, kw = weight.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    out = cols @ weight.reshape(o, -1).T + bias
    return np.ascontiguousarray(out.T.reshape(o, oh, ow))


def conv2d_backward(x, weight, grad_out, stride, pad):
    o, c, kh, kw = weight.shape
    _, h, w = x.shape
    oh, ow = grad_out.shape[1], grad_out.shape[2]
    cols, _, _ = _im2col(x, kh, kw, stride, pad)
    gmat = grad_out.reshape(o, oh * ow)

    grad_w = (gmat @ cols).reshape(o, c, kh, kw)
    grad_b = gmat.sum(axis=1)

    gcols = gmat.T @ weight.reshape(o, -1)  # (oh*ow, c*kh*kw)
    gcells = gcols.reshape(oh, ow, c, kh, kw).transpose(2, 0, 1, 3, 4)
    gpad = np.zeros((c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            gpad[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcells[:, :, :, i, j]
    grad_x = gpad[:, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def maxpool2x2_forward(x):
    c, h, w = x.shape
    oh, ow = (h + 1) // 2, (w + 1) // 2
    xp = np.full((c, 2 * oh, 2 * ow), -np.inf)
    xp[:, :h, :w] = x
    # window cells kept in (dy, dx) order so argmax ties pick the first
    # element in row-major order; clipped cells are -inf and never win
    win = xp.reshape(c, oh, 2, ow, 2).transpose(0, 1, 3, 2, 4).reshape(c, oh, ow, 4)
    k = win.argmax(axis=3)
    out = np.take_along_axis(win, k[..., None], axis=3)[..., 0]
    ys = 2 * np.arange(oh)[None, :, None] + k // 2
    xs = 2 * np.arange(ow)[None, None, :] + k % 2
    idx = (ys * w + xs).astype(np.int64)
    return np.ascontiguousarray(out), np.ascontiguousarray(idx)


def maxpool2x2_backward(x_shape, idx, grad_out):
    c, h, w = x_shape
    grad_x = np.zeros((c, h * w))
    for ch in range(c):
        np.add.at(grad_x[ch], idx[ch].ravel(), grad_out[ch].ravel())
    return grad_x.reshape(c, h, w)
