"""Minimal reverse-mode autodiff: tensors, ops, Adam, checkpoint container."""

from . import kernels
from .checkpoint import CheckpointError, Record, load_blocks, load_records, save_blocks, save_records
from .optim import ParameterBlock, adam_step
from .tensor import (
    SIGMOID_FLOOR,
    Tensor,
    activation,
    add,
    affine,
    as_tensor,
    concat,
    conv2d,
    div,
    exp,
    grad_enabled,
    log,
    make_op,
    maxpool2x2,
    mul,
    neg,
    no_grad,
    power,
    relu,
    repeat_rows,
    reshape,
    sigmoid_scaled,
    sub,
    tile_rows,
    tmean,
    tsum,
)

__all__ = [
    "SIGMOID_FLOOR", "Tensor", "activation", "add", "affine", "as_tensor",
    "concat", "conv2d", "div", "exp", "grad_enabled", "log", "make_op",
    "maxpool2x2", "mul", "neg", "no_grad", "power", "relu", "reshape",
    "repeat_rows", "sigmoid_scaled", "sub", "tile_rows", "tmean", "tsum",
    "ParameterBlock", "adam_step",
    "CheckpointError", "Record", "load_blocks", "load_records",
    "save_blocks", "save_records",
    "kernels",
]
