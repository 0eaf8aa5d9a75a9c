"""SGD and Adam updates with milestone learning-rate decay."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .tensor import ContractError, Tensor


class Optimizer:
    """Updates a fixed list of parameters from their accumulated gradients.

    ``step()`` consumes gradients: afterwards every parameter reads as
    zero-grad again, and stepping without a fresh backward pass raises.
    The learning rate is ``lr * decay ** m`` where m counts milestones at
    or below the current epoch (set via ``set_epoch``).
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        kind: str = "sgd",
        lr: float = 1e-2,
        milestones: Sequence[int] = (),
        decay: float = 0.1,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind: {kind!r}")
        for p in self.params:
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise ContractError("optimizer parameters must be trainable tensors")
        self.kind = kind
        self.base_lr = float(lr)
        self.lr = float(lr)
        self.milestones = tuple(sorted(int(m) for m in milestones))
        self.decay = float(decay)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.step_count = 0
        if kind == "adam":
            self._m = [np.zeros_like(p.data) for p in self.params]
            self._v = [np.zeros_like(p.data) for p in self.params]

    def set_epoch(self, epoch: int) -> None:
        hits = sum(1 for m in self.milestones if epoch >= m)
        self.lr = self.base_lr * self.decay**hits

    def zero_grad(self) -> None:
        for p in self.params:
            p._grad = None

    def step(self) -> None:
        grads = []
        for p in self.params:
            if p._grad is None:
                raise ContractError("parameter has no gradient; run backward first")
            grads.append(p._grad)

        self.step_count += 1
        if self.kind == "sgd":
            for p, g in zip(self.params, grads):
                p.data -= self.lr * g
        else:
            b1, b2 = self.betas
            c1 = 1.0 - b1**self.step_count
            c2 = 1.0 - b2**self.step_count
            for p, g, m, v in zip(self.params, grads, self._m, self._v):
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * (g * g)
                p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

        for p in self.params:
            p._grad = None
