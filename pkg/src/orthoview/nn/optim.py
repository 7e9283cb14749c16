"""Adam with bias correction, and a decay-on-plateau LR scheduler."""

from __future__ import annotations

import numpy as np

from .. import kernels


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            kernels.adam_step(
                p.data.reshape(-1),
                np.ascontiguousarray(p.grad, dtype=np.float64).reshape(-1),
                m.reshape(-1),
                v.reshape(-1),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
                self.weight_decay,
            )

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "lr": self.lr,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src


class PlateauScheduler:
    """Multiply the LR by ``factor`` after ``patience`` evaluations without
    improvement; the first evaluation seeds the best value.

    mode "max" treats larger metrics as better (accuracy), "min" smaller
    (loss).  The LR never drops below lr_min.
    """

    def __init__(self, optimizer: Adam, mode="max", factor=0.5, patience=10, lr_min=1e-5):
        if mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        self.optimizer = optimizer
        self.mode = mode
        self.factor = factor
        self.patience = patience
        self.lr_min = lr_min
        self.best = None
        self.bad_count = 0

    def step(self, metric: float) -> float:
        """Record one evaluation; returns the (possibly decayed) LR."""
        if self.best is None:
            self.best = metric
        elif (metric > self.best) if self.mode == "max" else (metric < self.best):
            self.best = metric
            self.bad_count = 0
        else:
            self.bad_count += 1
            if self.bad_count >= self.patience:
                self.optimizer.lr = max(self.lr_min, self.optimizer.lr * self.factor)
                self.bad_count = 0
        return self.optimizer.lr
