"""Reverse-mode automatic differentiation over dense numpy tensors."""

from .conv import (ConvSpec, avg_pool2d, conv2d, conv2d_transpose, global_avg_pool,
                   global_max_pool, max_pool2d)
from .gradcheck import grad_check
from .ops import (abs, add, clip, concat, div, exp, leaky_relu, log, matmul, mul, neg, power,
                  reduce_max, reduce_mean, reduce_sum, relu, reshape, scale, sigmoid, slice,
                  softmax, sqrt, square, stack, sub, tanh, transpose, upsample_nearest)
from .tensor import (Tape, Tensor, apply, as_tensor, backward, current_tape, default_dtype,
                     grad_enabled, no_grad, precision, tape, zero_grad)

__all__ = [
    "ConvSpec", "Tape", "Tensor", "abs", "add", "apply", "as_tensor", "avg_pool2d", "backward",
    "clip", "concat", "conv2d", "conv2d_transpose", "current_tape", "default_dtype", "div", "exp",
    "global_avg_pool", "global_max_pool", "grad_check", "grad_enabled", "leaky_relu", "log",
    "matmul", "max_pool2d", "mul", "neg", "no_grad", "power", "precision", "reduce_max",
    "reduce_mean", "reduce_sum", "relu", "reshape", "scale", "sigmoid", "slice", "softmax", "sqrt",
    "square", "stack", "sub", "tanh", "tape", "transpose", "upsample_nearest", "zero_grad",
]
