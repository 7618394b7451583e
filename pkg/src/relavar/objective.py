"""Output scoring, ranking losses and the per-event ELBO term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from relavar.errors import NumericError
from relavar.numerics import sigmoid

SCORE_CLAMP = 1e-12


@dataclass
class OutputParams:
    Wy: np.ndarray  # (m, D)

    @property
    def n_items(self) -> int:
        return self.Wy.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.Wy.shape[1]


@dataclass(frozen=True)
class LossValue:
    data_term: float
    kl_term: float
    total: float


def logits(out: OutputParams, h) -> np.ndarray:
    """Raw item scores ``Wy @ h``; ``h`` may carry leading batch axes."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != out.latent_dim:
        raise ValueError(f"latent sample of size {h.shape[-1]} does not match Wy {out.Wy.shape}")
    return h @ out.Wy.T


def score_all(out: OutputParams, h) -> np.ndarray:
    """Per-item probabilities ``sigmoid(Wy @ h)``. Accepts a LatentSample or an array."""
    h = getattr(h, "h", h)
    return sigmoid(logits(out, h))


def _clamp(scores: np.ndarray) -> np.ndarray:
    return np.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)


def cross_entropy(scores, target: int) -> float:
    """Binary cross-entropy of an item score vector against a one-hot target."""
    scores = _clamp(np.asarray(scores, dtype=np.float64))
    if not 0 <= target < scores.shape[0]:
        raise IndexError(f"target {target} out of range")
    neg = np.log1p(-scores)
    return float(-np.log(scores[target]) - (neg.sum() - neg[target]))


def cross_entropy_batch(scores: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Loss and logit-gradient for scores of shape (..., m) and integer targets (...).

    The gradient is taken through the clamp: entries pinned at the clamp
    boundary get zero gradient.
    """
    clamped = _clamp(scores)
    onehot = np.zeros_like(scores)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    pos = np.where(onehot > 0, -np.log(clamped), 0.0)
    neg = np.where(onehot > 0, 0.0, -np.log1p(-clamped))
    loss = (pos + neg).sum(axis=-1)
    inside = (scores > SCORE_CLAMP) & (scores < 1.0 - SCORE_CLAMP)
    grad = np.where(inside, scores - onehot, 0.0)
    return loss, grad


def _top1_parts(scores_raw: np.ndarray, target: int, negatives: np.ndarray):
    if negatives.size == 0:
        raise ValueError("TOP1 loss needs at least one negative item")
    if np.any(negatives == target):
        raise ValueError("target item appears among the negatives")
    diff = sigmoid(scores_raw[negatives] - scores_raw[target])
    reg = sigmoid(scores_raw[negatives] ** 2)
    return diff, reg


def top1_loss(scores_raw, target: int, negatives) -> float:
    """Pairwise TOP1 loss over sampled negatives, on pre-sigmoid logits."""
    scores_raw = np.asarray(scores_raw, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.int64)
    diff, reg = _top1_parts(scores_raw, target, negatives)
    return float(np.mean(diff + reg))


def top1_grad(scores_raw, target: int, negatives) -> tuple[float, np.ndarray]:
    """TOP1 loss and its gradient with respect to every logit."""
    scores_raw = np.asarray(scores_raw, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.int64)
    diff, reg = _top1_parts(scores_raw, target, negatives)
    n = negatives.size
    grad = np.zeros_like(scores_raw)
    d_diff = diff * (1.0 - diff) / n
    np.add.at(grad, negatives, d_diff + reg * (1.0 - reg) * 2.0 * scores_raw[negatives] / n)
    grad[target] -= d_diff.sum()
    return float(np.mean(diff + reg)), grad


def elbo_step_loss(kl: float, data_loss: float, kl_weight: float = 1.0) -> LossValue:
    """Negative ELBO contribution of one event: data loss plus weighted KL."""
    if kl < 0:
        raise NumericError(f"KL divergence must be nonnegative, got {kl}")
    return LossValue(data_term=data_loss, kl_term=kl, total=data_loss + kl_weight * kl)
