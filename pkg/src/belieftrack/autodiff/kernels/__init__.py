"""Spatial kernel backend selection.

Two interchangeable implementations exist: a numpy reference and a compiled
extension. By default each operation is routed to whichever implementation
benchmarks faster (see benchmarks/bench_kernels.py): convolution stays on
the reference implementation, whose im2col matmul hits BLAS, while the
pooling kernels use the extension when it is importable. Setting
BELIEFTRACK_KERNELS=reference|native forces one implementation for every
operation (forcing `native` raises if the extension failed to build).
Parity between the implementations is covered by tests.
"""

import os

import numpy as np

from . import reference

try:
    from . import _native
except ImportError:
    _native = None

_requested = os.environ.get("BELIEFTRACK_KERNELS", "").strip().lower()

if _requested == "native":
    if _native is None:
        raise ImportError("BELIEFTRACK_KERNELS=native but the compiled "
                          "extension is not importable")
    _conv, _pool = _native, _native
    BACKEND = "native"
elif _requested in ("reference", "python", "numpy"):
    _conv, _pool = reference, reference
    BACKEND = "reference"
elif _requested in ("", "auto"):
    if _native is None:
        _conv, _pool = reference, reference
        BACKEND = "reference"
    else:
        _conv, _pool = reference, _native
        BACKEND = "auto"
else:
    raise ValueError(f"unknown kernel backend {_requested!r}")


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, weight, bias, stride=2, pad=1):
    return _conv.conv2d_forward(_f64(x), _f64(weight), _f64(bias), stride, pad)


def conv2d_backward(x, weight, grad_out, stride=2, pad=1):
    return _conv.conv2d_backward(_f64(x), _f64(weight), _f64(grad_out), stride, pad)


def maxpool2x2_forward(x):
    return _pool.maxpool2x2_forward(_f64(x))


def maxpool2x2_backward(x_shape, idx, grad_out):
    return _pool.maxpool2x2_backward(
        tuple(x_shape), np.ascontiguousarray(idx, dtype=np.int64), _f64(grad_out))


conv_output_size = reference.conv_output_size
