"""Learnable-parameter slots and the Adam update."""

import numpy as np

from cola.errors import TrainingDiverged


class ParamSlot:
    """One learnable tensor with its gradient and Adam moments.

    All four arrays share a shape; `grad` is accumulated by backward passes
    and zeroed by `adam_step`.
    """

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    def zero_grad(self):
        self.grad[...] = 0.0


def adam_step(slot, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard Adam with bias correction; zeroes the gradient afterwards."""
    if not np.all(np.isfinite(slot.grad)):
        raise TrainingDiverged("non-finite gradient entry in Adam step")
    slot.step_count += 1
    t = slot.step_count
    slot.adam_m = beta1 * slot.adam_m + (1.0 - beta1) * slot.grad
    slot.adam_v = beta2 * slot.adam_v + (1.0 - beta2) * slot.grad ** 2
    m_hat = slot.adam_m / (1.0 - beta1 ** t)
    v_hat = slot.adam_v / (1.0 - beta2 ** t)
    slot.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    slot.zero_grad()
    return slot
