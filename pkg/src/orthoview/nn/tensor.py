"""Minimal reverse-mode autodiff over float64 numpy arrays.

A Tensor wraps a value array and, when gradients are enabled and some
input requires them, a closure computing the vector-Jacobian product.
``backward()`` walks the tape in reverse topological order.  Everything is
64-bit so finite-difference checks can be tight.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .. import kernels

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction (inference / metric evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p._grad_fn is not None or p.requires_grad:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node._grad_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._grad_fn(node.grad)):
                if g is None or not (parent._grad_fn is not None or parent.requires_grad):
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, grad_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p._grad_fn is not None or p.requires_grad for p in parents):
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
        out.requires_grad = True
    return out


def _unbroadcast(g, shape):
    """Sum a gradient down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / shape ops
# ---------------------------------------------------------------------------


def add(x: Tensor, y: Tensor) -> Tensor:
    data = x.data + y.data
    return _make(data, (x, y), lambda g: (_unbroadcast(g, x.data.shape), _unbroadcast(g, y.data.shape)))


def mul(x: Tensor, y: Tensor) -> Tensor:
    data = x.data * y.data
    return _make(
        data,
        (x, y),
        lambda g: (_unbroadcast(g * y.data, x.data.shape), _unbroadcast(g * x.data, y.data.shape)),
    )


def matmul(x: Tensor, y: Tensor) -> Tensor:
    if x.data.ndim != 2 or y.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {x.data.shape} @ {y.data.shape}")
    if x.data.shape[1] != y.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {x.data.shape} @ {y.data.shape}")
    data = x.data @ y.data
    return _make(data, (x, y), lambda g: (g @ y.data.T, x.data.T @ g))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return _make(out, (x,), lambda g: (g * (out > 0.0),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(datas))
        )

    return _make(np.concatenate(datas, axis=axis), tuple(tensors), grad_fn)


def amax(x: Tensor, axis: int) -> Tensor:
    """Max over one axis; gradient routes to the first maximum (ties)."""
    idx = np.argmax(x.data, axis=axis)
    data = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def grad_fn(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (dx,)

    return _make(data, (x,), grad_fn)


def mean(x: Tensor, axes, keepdims=False) -> Tensor:
    axes = tuple(axes) if isinstance(axes, (tuple, list)) else (axes,)
    count = int(np.prod([x.data.shape[a] for a in axes]))
    data = x.data.mean(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape) / count,)

    return _make(data, (x,), grad_fn)


# ---------------------------------------------------------------------------
# network ops
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (..., I) @ w (I, O) + b."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"linear shape mismatch: x {x.data.shape} vs w {w.data.shape}")
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    y2 = x2 @ w.data
    if b is not None:
        y2 = y2 + b.data

    def grad_fn(g):
        g2 = g.reshape(-1, w.data.shape[1])
        dx = (g2 @ w.data.T).reshape(x.data.shape)
        dw = x2.T @ g2
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y2.reshape(*lead, w.data.shape[1]), parents, grad_fn)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0, k: int = 3) -> Tensor:
    """2-D convolution (cross-correlation) as one im2col GEMM.

    Channels-last: x is (B, H, W, C), the weight is the flattened patch
    matrix (k*k*C, F).  The single (B*OH*OW, k*k*C) @ (k*k*C, F) product
    keeps the whole batch in one BLAS call.
    """
    B, H, W, C = x.data.shape
    K, F = w.data.shape
    if K != k * k * C:
        raise ValueError(
            f"conv2d shape mismatch: input {x.data.shape} with k={k} needs weight ({k * k * C}, F), got {w.data.shape}"
        )
    OH = (H + 2 * pad - k) // stride + 1
    OW = (W + 2 * pad - k) // stride + 1
    if OH < 1 or OW < 1:
        raise ValueError(f"conv2d output would be empty for input {x.data.shape}, kernel {k}, stride {stride}, pad {pad}")
    cols = kernels.im2col(x.data, k, k, stride, stride, pad, pad)  # (B*L, K)
    y2 = cols @ w.data
    if b is not None:
        y2 = y2 + b.data

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.reshape(B * OH * OW, F))
        dw = cols.T @ g2
        dcols = g2 @ w.data.T
        dx = kernels.col2im(dcols, B, H, W, C, k, k, stride, stride, pad, pad)
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y2.reshape(B, OH, OW, F), parents, grad_fn)


def maxpool2d(x: Tensor, k: int, stride: int, pad: int = 0) -> Tensor:
    """Channels-last (B, H, W, C) max pool."""
    B, H, W, C = x.data.shape
    y, arg = kernels.maxpool_fwd(x.data, k, stride, pad)

    def grad_fn(g):
        return (kernels.maxpool_bwd(g, arg, H, W),)

    return _make(y, (x,), grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, H, W, C) -> (B, C)."""
    return mean(x, (1, 2))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization; channels are the last axis, every other axis is
    part of the batch.

    Train mode normalizes with batch statistics and updates the running
    buffers in place (unbiased variance, PyTorch convention).  Eval mode is
    a fixed affine map of the running statistics.
    """
    c = x.data.shape[-1]
    full_shape = x.data.shape
    x2 = x.data.reshape(-1, c)

    if training:
        if full_shape[0] < 2:
            raise ValueError(f"batchnorm train mode needs batch >= 2, got input {full_shape}")
        count = x2.shape[0]
        mu = x2.mean(axis=0)
        xhat = x2 - mu
        var = np.einsum("nc,nc->c", xhat, xhat) / count
        inv = 1.0 / np.sqrt(var + eps)
        xhat *= inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (count / max(count - 1, 1))
        out = xhat * gamma.data
        out += beta.data

        def grad_fn(g):
            g2 = g.reshape(-1, c)
            dgamma = np.einsum("nc,nc->c", g2, xhat)
            dbeta = g2.sum(axis=0)
            dx = g2 * gamma.data
            m1 = dx.mean(axis=0)
            m2 = np.einsum("nc,nc->c", dx, xhat) / count
            dx -= m1
            dx -= xhat * m2
            dx *= inv
            return dx.reshape(full_shape), dgamma, dbeta

        return _make(out.reshape(full_shape), (x, gamma, beta), grad_fn)

    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x2 - running_mean) * inv
    out = xhat * gamma.data
    out += beta.data

    def grad_fn(g):
        g2 = g.reshape(-1, c)
        return (
            (g2 * (gamma.data * inv)).reshape(full_shape),
            np.einsum("nc,nc->c", g2, xhat),
            g2.sum(axis=0),
        )

    return _make(out.reshape(full_shape), (x, gamma, beta), grad_fn)
