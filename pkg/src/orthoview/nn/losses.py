"""Classification losses: cross-entropy and its label-smoothed variant."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _make


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log softmax over the last axis (plain arrays)."""
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def smooth_loss(logits: Tensor, labels, eps: float, n_classes: int | None = None) -> Tensor:
    """Mean cross-entropy against smoothed targets (1-eps)*onehot + eps/K.

    eps = 0 reduces exactly to plain cross-entropy.  Stabilized by
    max-subtraction inside the log-sum-exp.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must be in [0, 1), got {eps}")
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("non-finite logits")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim == 0:
        labels = labels[None]
    batch, k = logits.data.reshape(-1, logits.data.shape[-1]).shape
    if n_classes is not None and n_classes != k:
        raise ValueError(f"logits have {k} classes, expected {n_classes}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label outside [0, {k})")
    l2 = logits.data.reshape(batch, k)
    logp = log_softmax(l2)
    targets = np.full((batch, k), eps / k)
    targets[np.arange(batch), labels] = 1.0 - eps + eps / k
    loss = -(targets * logp).sum() / batch

    def grad_fn(g):
        return ((np.exp(logp) - targets).reshape(logits.data.shape) * (g / batch),)

    return _make(np.float64(loss), (logits,), grad_fn)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true labels."""
    return smooth_loss(logits, labels, eps=0.0)
