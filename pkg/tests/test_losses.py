"""Losses: exact identities and an independently recomputed oracle value."""

import numpy as np
import pytest

from orthoview.nn.gradcheck import grad_check
from orthoview.nn.losses import cross_entropy, log_softmax, smooth_loss, softmax
from orthoview.nn.tensor import Tensor
from orthoview.rng import stream

# K=4, eps=0.2, logits (2,0,0,0), label 0: targets (0.85, 0.05, 0.05, 0.05),
# loss = -sum t_k log softmax_k; recomputed standalone with mpmath (50 digits)
HAND_SMOOTH_LOSS = 0.6407529539131312


class TestValues:
    def test_uniform_logits_give_log_k(self):
        for k in (2, 4, 8, 40):
            logits = Tensor(np.zeros((1, k)))
            for eps in (0.0, 0.1, 0.2):
                loss = smooth_loss(logits, np.array([0]), eps)
                assert abs(loss.item() - np.log(k)) < 1e-12

    def test_hand_computed_example(self):
        loss = smooth_loss(Tensor(np.array([[2.0, 0.0, 0.0, 0.0]])), np.array([0]), 0.2)
        assert abs(loss.item() - HAND_SMOOTH_LOSS) < 1e-15

    def test_eps_zero_reduces_to_cross_entropy(self):
        g = stream(0, "ce")
        for _ in range(1000):
            logits = Tensor(g.normal(size=(1, 6)) * 3)
            label = np.array([g.integers(0, 6)])
            a = smooth_loss(logits, label, 0.0).item()
            b = cross_entropy(logits, label).item()
            assert abs(a - b) < 1e-12

    def test_softmax_shift_invariance(self):
        g = stream(1, "shift")
        logits = g.normal(size=(8, 5))
        shifted = logits + 123.456
        assert np.abs(softmax(logits) - softmax(shifted)).max() < 1e-12

    def test_extreme_logits_stable(self):
        loss = cross_entropy(Tensor(np.array([[1000.0, 0.0, -1000.0]])), np.array([0]))
        assert np.isfinite(loss.item()) and loss.item() < 1e-12
        loss = cross_entropy(Tensor(np.array([[-1000.0, 1000.0]])), np.array([0]))
        assert loss.item() == pytest.approx(2000.0)

    def test_batch_is_mean(self):
        g = stream(2, "batch")
        logits = g.normal(size=(5, 4))
        labels = g.integers(0, 4, size=5)
        total = smooth_loss(Tensor(logits), labels, 0.2).item()
        singles = [smooth_loss(Tensor(logits[i : i + 1]), labels[i : i + 1], 0.2).item() for i in range(5)]
        assert abs(total - np.mean(singles)) < 1e-12

    def test_validation(self):
        logits = Tensor(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            smooth_loss(logits, np.array([0, 1]), 1.0)
        with pytest.raises(ValueError):
            smooth_loss(logits, np.array([0, 3]), 0.1)
        with pytest.raises(ValueError, match="non-finite"):
            smooth_loss(Tensor(np.array([[np.nan, 0.0]])), np.array([0]), 0.1)

    def test_log_softmax_normalizes(self):
        lp = log_softmax(stream(3, "ls").normal(size=(4, 7)))
        np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("eps", [0.0, 0.2])
    def test_loss_gradient(self, eps):
        logits = Tensor(stream(4, "lg").normal(size=(3, 5)), requires_grad=True)
        labels = np.array([0, 3, 2])
        err = grad_check(lambda: smooth_loss(logits, labels, eps), [logits])
        assert err < 1e-6

    def test_gradient_is_softmax_minus_target(self):
        g = stream(5, "an")
        logits = Tensor(g.normal(size=(2, 4)), requires_grad=True)
        labels = np.array([1, 2])
        loss = smooth_loss(logits, labels, 0.2)
        loss.backward()
        t = np.full((2, 4), 0.05)
        t[[0, 1], [1, 2]] = 0.85
        np.testing.assert_allclose(logits.grad, (softmax(logits.data) - t) / 2, atol=1e-12)
