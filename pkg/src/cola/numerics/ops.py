"""Elementwise activations, row softmax and inverted dropout with analytic backwards."""

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, pre_activation):
    return grad_out * (pre_activation > 0.0)


def sigmoid(x):
    # split by sign to stay overflow-free for large |x|
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out, sig_out):
    return grad_out * sig_out * (1.0 - sig_out)


def softmax_rows(x):
    """Row-wise softmax of a 2-D array (also accepts a single 1-D row)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] == 0:
        raise ValueError("softmax rows must be nonempty")
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=1, keepdims=True)
    return out[0] if squeeze else out


def dropout(x, rate, rng, training):
    """Inverted dropout: surviving entries are scaled by 1/(1-rate) at train
    time so inference is the identity. Returns (output, keep mask)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x.copy(), np.ones_like(x)
    mask = (rng.random(x.shape) >= rate).astype(np.float64)
    return x * mask / (1.0 - rate), mask


def dropout_backward(grad_out, mask, rate):
    return grad_out * mask / (1.0 - rate)
