from dataclasses import dataclass

import numpy as np

EPS = 1e-7


@dataclass(frozen=True)
class LossReport:
    cross_entropy: float
    penalty: float  # 0.5 * sum of squared weights
    total: float
    beta: float


def cross_entropy_loss(predictions, labels):
    """Multi-label binary cross entropy summed over the units.

    For a batch (N, K) the result is the mean over the N samples of the
    per-sample sums. Returns ``(loss, grad)`` with ``grad`` taken w.r.t.
    the (clamped) predictions, on the same scale as ``loss``.
    """
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} differ in shape")
    y = y.astype(p.dtype, copy=False)
    pc = np.clip(p, EPS, 1 - EPS)
    n = p.shape[0] if p.ndim == 2 else 1
    terms = -(y * np.log(pc) + (1 - y) * np.log1p(-pc))
    loss = float(terms.sum()) / n
    grad = ((pc - y) / (pc * (1 - pc))) / n
    return loss, grad


def sigmoid_cross_entropy_grad(predictions, labels):
    """Gradient of the batch-mean loss w.r.t. the pre-sigmoid logits: (y_hat - y) / N."""
    p = np.asarray(predictions)
    n = p.shape[0] if p.ndim == 2 else 1
    return (p - np.asarray(labels).astype(p.dtype, copy=False)) / p.dtype.type(n)


def l2_penalty(all_params, beta):
    """Weight decay over conv and FC weights (biases excluded).

    Adds ``beta * W`` into each ``grad_weights`` and returns
    ``0.5 * beta * sum(W**2)``.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if beta == 0:
        return 0.0
    sq = 0.0
    for prm in all_params:
        sq += float(np.sum(prm.weights.astype(np.float64) ** 2))
        prm.grad_weights += prm.weights.dtype.type(beta) * prm.weights
    return 0.5 * beta * sq


def squared_weight_sum(all_params) -> float:
    return float(sum(np.sum(p.weights.astype(np.float64) ** 2) for p in all_params))
