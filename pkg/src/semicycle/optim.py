from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class Adam:
    """Adam over a named parameter dict; moment buffers live alongside the names."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self)

    def state(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float64)}
        for k in self.params:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        self.t = int(state["t"][0])
        for k, p in self.params.items():
            self.m[k] = np.asarray(state[f"m/{k}"], dtype=p.data.dtype).reshape(p.shape).copy()
            self.v[k] = np.asarray(state[f"v/{k}"], dtype=p.data.dtype).reshape(p.shape).copy()


def adam_step(params: Mapping[str, Tensor], lr: float, beta1: float, beta2: float,
              eps: float, state: Adam) -> None:
    for k, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {k!r} has no gradient")
    state.t += 1
    bc1 = 1 - beta1 ** state.t
    bc2 = 1 - beta2 ** state.t
    for k, p in params.items():
        g = p.grad
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.data.dtype)
