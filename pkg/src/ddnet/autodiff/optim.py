from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


class SGD:
    """Momentum SGD with L2 weight decay folded into the velocity.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v
    """

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9,
                 weight_decay: float = 4e-5):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"parameter {i} of shape {p.shape} has no gradient")
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data = p.data - self.lr * v
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

