"""Loss functions returning (scalar loss, gradient w.r.t. first argument)."""

from __future__ import annotations

import numpy as np

from ..errors import DataFormatError


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over every element."""
    if pred.shape != target.shape:
        raise DataFormatError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error, the alternative explicit reconstruction metric."""
    if pred.shape != target.shape:
        raise DataFormatError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    return loss, np.sign(diff) / diff.size


def bce_with_logits(logits: np.ndarray, target: float | np.ndarray):
    """Binary cross entropy on raw scores, numerically stable.

    ``target`` may be a scalar label applied to the whole batch or an array
    matching ``logits``. Mean over all elements.
    """
    t = np.broadcast_to(np.asarray(target, dtype=np.float64), logits.shape)
    loss = np.maximum(logits, 0.0) - logits * t + np.log1p(np.exp(-np.abs(logits)))
    sig = np.empty_like(logits)
    pos = logits >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    ex = np.exp(logits[~pos])
    sig[~pos] = ex / (1.0 + ex)
    return float(loss.mean()), (sig - t) / logits.size


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, weights=None):
    """Cross entropy over the last axis of ``logits``.

    ``labels`` holds integer class ids with shape logits.shape[:-1].
    ``weights`` (same shape as labels) masks or reweights positions;
    the loss is the weighted mean over positions with nonzero weight.
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise DataFormatError(
            f"labels shape {labels.shape} does not match logits {logits.shape}"
        )
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, labels[..., None], axis=-1)[..., 0]
    nll = logsumexp - picked
    probs = np.exp(shifted - logsumexp[..., None])
    one_hot = np.zeros_like(logits)
    np.put_along_axis(one_hot, labels[..., None], 1.0, axis=-1)
    if weights is None:
        total = float(labels.size)
        loss = float(nll.sum() / total)
        grad = (probs - one_hot) / total
    else:
        w = np.asarray(weights, dtype=np.float64)
        total = float(w.sum())
        if total <= 0:
            raise DataFormatError("softmax_cross_entropy needs at least one weighted position")
        loss = float((nll * w).sum() / total)
        grad = (probs - one_hot) * w[..., None] / total
    return loss, grad
