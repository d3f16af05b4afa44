"""Reverse-mode automatic differentiation on float64 numpy arrays."""
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_param
from .nn import Conv2d, Module, Parameter
from .ops import (bilinear_resize, channel_max, channel_mean, conv2d, cross_entropy,
                  global_avg_pool, global_max_pool, log_softmax, max_pool2d, softmax,
                  spatial_linear)
from .optim import SGD
from .tensor import (Tensor, amax, as_tensor, concat, exp, log, no_grad, relu, sigmoid)

__all__ = [
    "SGD", "Conv2d", "Module", "Parameter", "Tensor", "amax", "as_tensor",
    "bilinear_resize", "channel_max", "channel_mean", "concat", "conv2d", "cross_entropy",
    "exp", "global_avg_pool", "global_max_pool", "grad_check", "grad_check_param", "log",
    "log_softmax", "load_checkpoint", "max_pool2d", "no_grad", "relu", "save_checkpoint",
    "sigmoid", "softmax", "spatial_linear",
]
