"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0


def adam_step(params: list[Tensor], state: OptimizerState, lr: float = 2e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Apply one bias-corrected Adam update in place, then clear the grads."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} (shape {p.shape}) has no gradient")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError(f"optimizer state tracks {len(state.m)} tensors, got {len(params)}")

    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad.astype(p.dtype, copy=False)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
        p.grad = None


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = OptimizerState()

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
