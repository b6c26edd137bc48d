"""Bias-corrected Adam over engine tensors."""

from __future__ import annotations

import numpy as np

from .engine import Tensor
from .errors import ContractError


class Adam:
    """Adam with first/second moment arrays per parameter.

    Parameters are updated in place; gradients are zeroed after each step
    so stale gradients can never leak into the next epoch.
    """

    def __init__(self, params: list[Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        for p in params:
            if not p.requires_grad:
                raise ContractError("Adam got a tensor that does not require grad")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError("Adam.step with a missing gradient; call zero_grad + backward first")
            if p.grad.shape != p.data.shape:
                raise ContractError("gradient shape does not match its parameter")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = np.zeros_like(p.data)


def adam_step(params: list[Tensor], state: Adam) -> None:
    """One update on an existing optimizer state (function-style entry point)."""
    if state.params is not params and list(state.params) != list(params):
        raise ContractError("adam_step: params do not match the optimizer state")
    state.step()
