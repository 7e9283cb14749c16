"""Central finite-difference gradient verification."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_gradient(fn, wrt: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar fn() w.r.t. every element of wrt.data."""
    num = np.zeros_like(wrt.data)
    flat = wrt.data.reshape(-1)
    nflat = num.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * h)
    return num


def grad_check(fn, wrt: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and numerical gradients.

    fn() must rebuild the forward pass from the current .data of the wrt
    tensors and return a scalar Tensor.  The error for each tensor is
    max |analytic - numerical| normalized by the larger of the two
    gradient magnitudes (floored at 1e-3 so exact zeros compare cleanly).
    """
    out = fn()
    for t in wrt:
        t.grad = None
    out.backward()
    analytic = []
    for t in wrt:
        if t.grad is None:
            raise ValueError("a wrt tensor received no gradient; is requires_grad set?")
        analytic.append(t.grad.copy())
    worst = 0.0
    for t, a in zip(wrt, analytic):
        n = numerical_gradient(fn, t, h)
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-3)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0) / scale))
    return worst
