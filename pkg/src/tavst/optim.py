"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

import numpy as np


class AdamState:
    """Per-parameter first/second moment buffers and the shared step counter."""

    def __init__(self, params, learning_rate: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adam_step(params, state: AdamState) -> None:
    """One Adam update over every parameter; gradients are zeroed afterward."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    lr = state.learning_rate
    for name, tensor in params.items():
        g = tensor.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        tensor.grad[...] = 0.0


def grad_global_norm(params) -> float:
    total = 0.0
    for _, tensor in params.items():
        total += float(np.sum(tensor.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    norm = grad_global_norm(params)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for _, tensor in params.items():
            tensor.grad *= factor
    return norm
