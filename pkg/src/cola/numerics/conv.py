"""Temporal convolution with stride 1 and length-preserving zero padding.

The heavy loops live in a compiled Cython extension when available; a
vectorized NumPy fallback is selected at import otherwise. Set
COLA_CONV_BACKEND=numpy (or =cython) to force a backend.
"""

import os

import numpy as np

from cola.numerics import _conv_np

_requested = os.environ.get("COLA_CONV_BACKEND", "auto")
if _requested not in ("auto", "cython", "numpy"):
    raise ValueError(f"COLA_CONV_BACKEND must be 'cython' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    _impl = _conv_np
    BACKEND = "numpy"
else:
    try:
        from cola.numerics import _conv_cy as _impl
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _conv_np
        BACKEND = "numpy"


def left_padding(kernel_width):
    """Zero snippets prepended so the output length equals the input length.

    floor((K-1)/2) on the left, ceil((K-1)/2) on the right.
    """
    return (kernel_width - 1) // 2


def _check_shapes(inp, kernel, bias):
    if inp.ndim != 2:
        raise ValueError(f"conv1d input must be 2-D (T, Cin), got shape {inp.shape}")
    if kernel.ndim != 3:
        raise ValueError(f"conv1d kernel must be 3-D (Cout, Cin, K), got shape {kernel.shape}")
    if kernel.shape[1] != inp.shape[1]:
        raise ValueError(
            f"kernel expects {kernel.shape[1]} input channels, input has {inp.shape[1]}")
    if bias.shape != (kernel.shape[0],):
        raise ValueError(
            f"bias shape {bias.shape} does not match {kernel.shape[0]} output channels")


def conv1d_forward(inp, kernel, bias):
    """inp (T, Cin) * kernel (Cout, Cin, K) + bias (Cout,) -> (T, Cout)."""
    inp = np.ascontiguousarray(inp, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    bias = np.ascontiguousarray(bias, dtype=np.float64)
    _check_shapes(inp, kernel, bias)
    return _impl.conv1d_forward(inp, kernel, bias, left_padding(kernel.shape[2]))


def conv1d_backward(grad_out, inp, kernel):
    """Analytic gradients of conv1d_forward.

    Returns (grad_input (T, Cin), grad_kernel (Cout, Cin, K), grad_bias (Cout,)).
    """
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    inp = np.ascontiguousarray(inp, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if grad_out.shape != (inp.shape[0], kernel.shape[0]):
        raise ValueError(
            f"grad_out shape {grad_out.shape} inconsistent with input {inp.shape} "
            f"and kernel {kernel.shape}")
    _check_shapes(inp, kernel, np.zeros(kernel.shape[0]))
    return _impl.conv1d_backward(grad_out, inp, kernel, left_padding(kernel.shape[2]))
