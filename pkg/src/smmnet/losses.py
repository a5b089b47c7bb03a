"""Masked, class-balanced AU / EXPR / VA losses and their unweighted sum.

Missing labels are encoded by sentinels (``-1`` for AU/EXPR, ``-5.0`` for VA).
Masked entries are removed with ``torch.where`` so their gradient is exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import AU_MISSING, EXPR_MISSING, VA_MISSING, TaskWeights


@dataclass
class LossBatch:
    au_logits: torch.Tensor      # (N, H)
    au_labels: torch.Tensor      # (N, H) in {0, 1, -1}
    expr_logits: torch.Tensor    # (N, C)
    expr_labels: torch.Tensor    # (N,) in {-1, 0..C-1}
    va_pred: torch.Tensor        # (N, 2)
    va_labels: torch.Tensor      # (N, 2), -5.0 where missing
    weights: TaskWeights

    @property
    def au_mask(self) -> torch.Tensor:
        return self.au_labels != AU_MISSING

    @property
    def expr_mask(self) -> torch.Tensor:
        return self.expr_labels != EXPR_MISSING

    @property
    def va_mask(self) -> torch.Tensor:
        return (self.va_labels != VA_MISSING).all(dim=-1)


class NonFiniteError(ValueError):
    """Raised when a loss input holds NaN or infinity."""


def _check_finite(name: str, t: torch.Tensor) -> None:
    if not torch.isfinite(t).all():
        raise NonFiniteError(f"non-finite values in {name}")


def _weights(w, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(np.asarray(w), dtype=like.dtype, device=like.device)


def au_loss(batch: LossBatch) -> torch.Tensor:
    """Positive-weighted BCE averaged over unmasked (sample, AU) pairs; 0 if none."""
    logits = batch.au_logits
    _check_finite("AU logits", logits)
    mask = batch.au_mask
    y = batch.au_labels.clamp(min=0).to(logits.dtype)
    pos_w = _weights(batch.weights.au_weights, logits)
    # log sigma(z) and log(1 - sigma(z)) computed from logits
    per = -(pos_w * y * F.logsigmoid(logits) + (1 - y) * F.logsigmoid(-logits))
    per = torch.where(mask, per, torch.zeros_like(per))
    k = int(mask.sum())
    return per.sum() / max(k, 1)


def expr_loss(batch: LossBatch) -> torch.Tensor:
    """Class-weighted softmax cross-entropy averaged over unmasked samples; 0 if none."""
    logits = batch.expr_logits
    _check_finite("EXPR logits", logits)
    mask = batch.expr_mask
    labels = batch.expr_labels.clamp(min=0)
    w = _weights(batch.weights.expr_weights, logits)[labels]
    nll = -F.log_softmax(logits, dim=-1).gather(-1, labels[:, None])[:, 0]
    per = torch.where(mask, w * nll, torch.zeros_like(nll))
    return per.sum() / max(int(mask.sum()), 1)


def ccc(pred, target):
    """Concordance correlation coefficient with population moments.

    Accepts torch tensors (differentiable, returns a tensor) or array-likes
    (returns a float). Two equal constant sequences have CCC 1.
    """
    is_tensor = isinstance(pred, torch.Tensor)
    if not is_tensor:
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise ValueError("ccc expects two 1-D sequences of equal length")
    if pred.shape[0] < 2:
        raise ValueError("ccc needs at least 2 samples")
    mp, mt = pred.mean(), target.mean()
    dp, dt = pred - mp, target - mt
    cov = (dp * dt).mean()
    denom = (dp * dp).mean() + (dt * dt).mean() + (mp - mt) ** 2
    if denom == 0:
        return torch.ones((), dtype=pred.dtype) if is_tensor else 1.0
    out = 2 * cov / denom
    return out if is_tensor else float(out)


def va_loss(batch: LossBatch) -> torch.Tensor:
    """(1 - CCC_valence) + (1 - CCC_arousal) over unmasked samples; 0 if fewer than 2."""
    mask = batch.va_mask
    pred = batch.va_pred
    if int(mask.sum()) < 2:
        return pred.sum() * 0.0
    p, t = pred[mask], batch.va_labels[mask].to(pred.dtype)
    return (1 - ccc(p[:, 0], t[:, 0])) + (1 - ccc(p[:, 1], t[:, 1]))


@dataclass
class LossBreakdown:
    au: torch.Tensor
    expr: torch.Tensor
    va: torch.Tensor
    has_au: bool
    has_expr: bool
    has_va: bool

    @property
    def total(self) -> torch.Tensor:
        return self.au + self.expr + self.va

    def as_floats(self) -> dict[str, float]:
        return {"loss_au": self.au.item(), "loss_expr": self.expr.item(),
                "loss_va": self.va.item(), "loss": self.total.item()}


def loss_breakdown(batch: LossBatch) -> LossBreakdown:
    return LossBreakdown(
        au_loss(batch), expr_loss(batch), va_loss(batch),
        has_au=bool(batch.au_mask.any()),
        has_expr=bool(batch.expr_mask.any()),
        has_va=int(batch.va_mask.sum()) >= 2,
    )


def total_loss(batch: LossBatch) -> torch.Tensor:
    """Unweighted sum of the three task losses; masked-out terms contribute 0."""
    return loss_breakdown(batch).total
