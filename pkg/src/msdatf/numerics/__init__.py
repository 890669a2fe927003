"""Minimal dense tensor engine with reverse-mode autodiff."""

from .functional import (
    RunningStats,
    batchnorm2d,
    conv2d,
    cross_entropy,
    dropout,
    layer_norm,
    linear,
    maxpool2d,
    relu,
    softmax,
)
from .optim import SGD, Adam
from .tensor import Tensor, as_tensor, concat, is_grad_enabled, l2norm, matmul, no_grad, pad

__all__ = [
    "Adam",
    "RunningStats",
    "SGD",
    "Tensor",
    "as_tensor",
    "batchnorm2d",
    "concat",
    "conv2d",
    "cross_entropy",
    "dropout",
    "is_grad_enabled",
    "l2norm",
    "layer_norm",
    "linear",
    "matmul",
    "maxpool2d",
    "no_grad",
    "pad",
    "relu",
    "softmax",
]
