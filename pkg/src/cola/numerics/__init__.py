"""Minimal dense-tensor numerics: temporal conv, activations, dropout, Adam.

Forward/backward passes are analytic (no autograd); the convolution runs on
a compiled Cython kernel when the extension built, on NumPy otherwise
(`cola.numerics.conv.BACKEND` tells which).
"""

from cola.numerics.adam import ParamSlot, adam_step
from cola.numerics.conv import BACKEND, conv1d_backward, conv1d_forward, left_padding
from cola.numerics.ops import (
    dropout,
    dropout_backward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    softmax_rows,
)

__all__ = [
    "BACKEND",
    "ParamSlot",
    "adam_step",
    "conv1d_backward",
    "conv1d_forward",
    "dropout",
    "dropout_backward",
    "left_padding",
    "relu",
    "relu_backward",
    "sigmoid",
    "sigmoid_backward",
    "softmax_rows",
]
