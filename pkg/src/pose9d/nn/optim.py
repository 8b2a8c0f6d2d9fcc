"""Bias-corrected adaptive-moment optimizer and the triangular cyclic
learning-rate policy.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError
from .params import ParamStore


def adam_step(param, grad, m, v, t, lr, betas=(0.9, 0.999), eps=1e-8):
    """One in-place update on a single tensor; t is 1-based."""
    if grad.shape != param.shape:
        raise ShapeMismatchError(f"grad {grad.shape} vs param {param.shape}")
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Optimizer over every parameter in a store, in insertion order."""

    def __init__(self, store: ParamStore, betas=(0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(store[n]) for n in store.names()}
        self.v = {n: np.zeros_like(store[n]) for n in store.names()}

    def step(self, lr: float) -> None:
        self.t += 1
        for name in self.store.names():
            adam_step(self.store[name], self.store.grad(name),
                      self.m[name], self.v[name], self.t, lr,
                      self.betas, self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t,
                "m": {k: val.copy() for k, val in self.m.items()},
                "v": {k: val.copy() for k, val in self.v.items()}}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for name in self.store.names():
            self.m[name][...] = state["m"][name]
            self.v[name][...] = state["v"][name]


def cyclic_lr(step: int, lr_min: float = 1e-6, lr_max: float = 1e-4,
              step_size: int = 20000) -> float:
    """Triangular wave: lr_min -> lr_max over step_size steps, back down
    over the next step_size, repeating."""
    pos = step % (2 * step_size)
    if pos > step_size:
        pos = 2 * step_size - pos
    return lr_min + (lr_max - lr_min) * (pos / step_size)
