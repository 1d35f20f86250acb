"""Vectorized NumPy implementation of the temporal convolution kernels.

This is the fallback backend; `cola.numerics._conv_cy` is the compiled
equivalent. Both compute the same map, summation order may differ in the
last few ulps.
"""

import numpy as np


def _padded_windows(inp, kernel_width, left_pad):
    num_steps = inp.shape[0]
    padded = np.zeros((num_steps + kernel_width - 1, inp.shape[1]))
    padded[left_pad:left_pad + num_steps] = inp
    # windows[t, ci, k] = padded[t + k, ci]
    return np.lib.stride_tricks.sliding_window_view(padded, kernel_width, axis=0)


def conv1d_forward(inp, kernel, bias, left_pad):
    """inp (T, Cin), kernel (Cout, Cin, K), bias (Cout,) -> (T, Cout)."""
    windows = _padded_windows(inp, kernel.shape[2], left_pad)
    return np.tensordot(windows, kernel, axes=([1, 2], [1, 2])) + bias


def conv1d_backward(grad_out, inp, kernel, left_pad):
    """Gradients of conv1d_forward w.r.t. (input, kernel, bias)."""
    num_steps, kernel_width = inp.shape[0], kernel.shape[2]
    windows = _padded_windows(inp, kernel_width, left_pad)

    grad_bias = grad_out.sum(axis=0)
    grad_kernel = np.tensordot(grad_out, windows, axes=([0], [0]))

    # scatter grad_out * kernel back onto the padded input positions
    contrib = np.tensordot(grad_out, kernel, axes=([1], [0]))  # (T, Cin, K)
    grad_padded = np.zeros((num_steps + kernel_width - 1, inp.shape[1]))
    for k in range(kernel_width):
        grad_padded[k:k + num_steps] += contrib[:, :, k]
    grad_input = grad_padded[left_pad:left_pad + num_steps]
    return grad_input, grad_kernel, grad_bias
