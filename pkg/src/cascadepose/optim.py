"""AdamW with decoupled weight decay and a multi-step LR schedule."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


class AdamW:
    """Decoupled-weight-decay Adam over named parameter groups.

    ``groups`` is a list of dicts: {"params": {name: Tensor}, "lr": float}.
    Weight decay multiplies the parameter directly (p *= 1 - lr*wd); the
    gradient-driven update uses bias-corrected first/second moments.
    """

    def __init__(self, groups, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr <= 0 or eps <= 0 or not (0 < betas[0] < 1 and 0 < betas[1] < 1):
            raise ContractError("AdamW hyperparameters must be positive")
        if isinstance(groups, dict):
            groups = [{"params": groups}]
        self.groups = []
        for g in groups:
            params = g["params"]
            self.groups.append(
                {
                    "params": params,
                    "lr": float(g.get("lr", lr)),
                    "m": {k: np.zeros_like(p.data) for k, p in params.items()},
                    "v": {k: np.zeros_like(p.data) for k, p in params.items()},
                }
            )
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.lr_scale = 1.0

    def zero_grad(self):
        # a parameter untouched by the step's graph keeps a zero gradient,
        # which steps cleanly; only a never-initialized grad is a contract bug
        for g in self.groups:
            for p in g["params"].values():
                p.grad = np.zeros_like(p.data)

    def step(self):
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for g in self.groups:
            lr = g["lr"] * self.lr_scale
            for name, p in g["params"].items():
                if p.grad is None:
                    raise ContractError(f"parameter {name!r} has no gradient")
                grad = p.grad
                m = g["m"][name]
                v = g["v"][name]
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * grad * grad
                if self.weight_decay:
                    p.data *= 1.0 - lr * self.weight_decay
                p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.data.dtype)


class MultiStepLR:
    """Scales the optimizer's learning rate by ``gamma`` at each milestone step."""

    def __init__(self, optimizer, milestones, gamma=0.5):
        self.optimizer = optimizer
        self.milestones = sorted(int(m) for m in milestones)
        self.gamma = gamma
        self.step_count = 0

    def step(self):
        self.step_count += 1
        if self.step_count in self.milestones:
            self.optimizer.lr_scale *= self.gamma
