"""Training objectives: supervised contrastive loss and softmax cross-entropy.

The contrastive loss treats every same-label pair in the batch as a positive
pair. For each anchor it averages, over its positives, the log-probability
that a temperature-scaled softmax over all other items assigns to that
positive. Anchors without any positive in the batch contribute zero and are
excluded from the batch average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

UNIT_NORM_TOL = 1e-5


@dataclass(frozen=True)
class LossResult:
    value: float
    per_anchor: np.ndarray  # (N,) anchor losses, 0 for anchors without positives
    grad: np.ndarray  # gradient of `value` wrt the (N, D) projection matrix


def supervised_contrastive_loss(
    projections: np.ndarray, labels: np.ndarray, temperature: float
) -> LossResult:
    """Batch contrastive loss over unit-norm projection rows.

    Per anchor i with P_i same-label partners:
        loss_i = -(1/P_i) * sum_{j in partners} log softmax_{k != i}(<z_i, z_k> / t)[j]
    and the batch loss is the mean of loss_i over anchors with P_i > 0.
    The log-sum-exp uses max subtraction; small temperatures would otherwise
    overflow the exponentials.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    z = np.asarray(projections)
    y = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise ParameterError(f"contrastive loss needs a batch of >= 2, got {n}")
    norms = np.sqrt((z.astype(np.float64) ** 2).sum(axis=1))
    worst = float(np.abs(norms - 1.0).max())
    if worst > 10 * UNIT_NORM_TOL:
        raise ParameterError(f"projection rows must be unit norm (worst deviation {worst:.2e})")

    sim = (z @ z.T) / temperature
    off_diag = ~np.eye(n, dtype=bool)
    neg_inf = np.array(-np.inf, dtype=sim.dtype)
    masked = np.where(off_diag, sim, neg_inf)
    row_max = masked.max(axis=1, keepdims=True)
    exp = np.exp(masked - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    log_prob = (masked - row_max) - np.log(denom)

    positives = (y[:, None] == y[None, :]) & off_diag
    pos_counts = positives.sum(axis=1)
    has_pos = pos_counts > 0
    per_anchor = np.zeros(n, dtype=z.dtype)
    if np.any(has_pos):
        pos_log_prob = np.where(positives, log_prob, 0.0).sum(axis=1)
        per_anchor[has_pos] = -(pos_log_prob[has_pos] / pos_counts[has_pos]).astype(z.dtype)
    n_active = int(has_pos.sum())
    value = float(per_anchor[has_pos].sum() / n_active) if n_active else 0.0

    # d value / d sim[i, j] for j != i: (softmax_ij - positive_ij / P_i) / n_active
    grad = np.zeros_like(z)
    if n_active:
        softmax = exp / denom
        coeff = softmax - np.where(
            has_pos[:, None], positives / np.maximum(pos_counts, 1)[:, None], 0.0
        )
        coeff[~has_pos] = 0.0
        coeff[~off_diag] = 0.0
        grad = ((coeff + coeff.T) @ z) / (n_active * temperature)
        grad = grad.astype(z.dtype)
    return LossResult(value=value, per_anchor=per_anchor, grad=grad)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood; returns (loss, grad wrt logits)."""
    n, c = logits.shape
    y = np.asarray(labels)
    if y.min(initial=0) < 0 or y.max(initial=0) >= c:
        raise ParameterError(f"labels must lie in [0, {c}), got range [{y.min()}, {y.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_denom = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_denom[:, None]
    loss = float(-log_probs[np.arange(n), y].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)
