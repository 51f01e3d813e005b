"""Minimal dense-tensor kernel: autodiff tape, ops, Adam, checkpoints."""

from .checkpoint import load_arrays, load_params, save_arrays, save_params
from .optim import AdamState, adam_step, orthogonal_init
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    clip,
    concat,
    conv2d,
    default_dtype,
    exp,
    gather_rows,
    grad_or_zeros,
    layer_norm,
    log_softmax,
    matmul,
    minimum,
    mul,
    narrow,
    neg,
    parameter,
    relu,
    reshape,
    set_check_finite,
    set_default_dtype,
    sigmoid,
    softmax,
    sub,
    tanh,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "AdamState", "Tape", "Tensor",
    "adam_step", "add", "backward", "clip", "concat", "conv2d", "default_dtype",
    "exp", "gather_rows", "grad_or_zeros", "layer_norm", "load_arrays",
    "load_params", "log_softmax", "matmul", "minimum", "mul", "narrow", "neg",
    "orthogonal_init", "parameter", "relu", "reshape", "save_arrays",
    "save_params", "set_check_finite", "set_default_dtype", "sigmoid",
    "softmax", "sub", "tanh", "tmean", "transpose", "tsum",
]
