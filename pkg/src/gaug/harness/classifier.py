"""Toy classifier trained on augmented batches: a linear softmax model over
flattened samples, with manual gradients, step learning-rate schedule, weight
decay, and label smoothing over row-stochastic targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalFailure, ValidationError


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def smooth_labels(labels: np.ndarray, s: float) -> np.ndarray:
    """(1-s) * y + s / C, applied after soft labels and mixing; keeps rows
    stochastic and is the identity at s = 0."""
    if not 0.0 <= s < 1.0:
        raise ValidationError(f"label smoothing must be in [0, 1), got {s}")
    if s == 0.0:
        return labels
    return (1.0 - s) * labels + s / labels.shape[1]


def step_lr(base_lr: float, epoch: int, milestones: list[int],
            decay: float) -> float:
    """Nonincreasing step schedule: lr decays by ``decay`` at each milestone."""
    passed = sum(epoch >= m for m in milestones)
    return base_lr * decay**passed


@dataclass
class LinearClassifier:
    """Flatten -> affine -> softmax. Deterministic forward pass; ``update``
    takes one SGD step on the cross-entropy against row-stochastic targets."""

    weights: np.ndarray  # n_features x n_classes
    bias: np.ndarray

    @classmethod
    def init(cls, n_features: int, n_classes: int, seed: int) -> "LinearClassifier":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((n_features, n_classes)) * 0.01
        return cls(w, np.zeros(n_classes))

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def predict_logits(self, batch: np.ndarray) -> np.ndarray:
        flat = batch.reshape(batch.shape[0], -1)
        if flat.shape[1] != self.weights.shape[0]:
            raise ValidationError(
                f"batch features {flat.shape[1]} != model {self.weights.shape[0]}")
        return flat @ self.weights + self.bias

    def loss_and_grads(self, batch: np.ndarray, targets: np.ndarray):
        flat = batch.reshape(batch.shape[0], -1)
        logits = flat @ self.weights + self.bias
        probs = _softmax(logits)
        logp = logits - logits.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        loss = float(-(targets * logp).sum(axis=1).mean())
        g_logits = (probs - targets) / batch.shape[0]
        return loss, flat.T @ g_logits, g_logits.sum(axis=0)

    def update(self, batch: np.ndarray, targets: np.ndarray, lr: float,
               weight_decay: float = 0.0) -> float:
        loss, gw, gb = self.loss_and_grads(batch, targets)
        if not np.isfinite(loss):
            raise NumericalFailure("non-finite classifier loss")
        self.weights -= lr * (gw + weight_decay * self.weights)
        self.bias -= lr * gb
        return loss
