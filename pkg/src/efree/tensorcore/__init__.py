"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""
from .checkpoint import load_tensors, save_tensors
from .functional import conv2d, grid_sample, layer_norm, linear, mse, resample2d, softmax
from .gradcheck import grad_check
from .nn import Conv2d, LayerNorm, Linear, Module, parameter, trunc_normal
from .optim import Adam, OptimizerState, adam_step
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    clamp,
    concat,
    default_dtype,
    div,
    elementwise,
    exp,
    gelu,
    getitem,
    grad_enabled,
    log,
    make_op,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    pad2d,
    power,
    precision,
    relu,
    reshape,
    sigmoid,
    sqrt,
    square,
    stack,
    sub,
    swapaxes,
    tanh,
    transpose,
    tsum,
    unbroadcast,
    where,
)

__all__ = [name for name in dir() if not name.startswith("_")]
