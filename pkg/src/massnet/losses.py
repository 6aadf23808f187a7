"""Training objectives: MAE, supervised contrastive loss and its
weight-penalised variant, and the weighted total."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import NumericError


def penalty_factor(m_i: float, m_j: float) -> float:
    """exp(|m_i - m_j| / m_i); note the anchor mass ``m_i`` is the divisor."""
    if not m_i > 0:
        raise ValueError(f"anchor mass must be positive, got {m_i}")
    return math.exp(abs(m_i - m_j) / m_i)


def penalty_matrix(weights) -> torch.Tensor:
    """Pairwise penalty factors, row = anchor."""
    w = torch.as_tensor(weights, dtype=torch.float64)
    if torch.any(w <= 0):
        raise ValueError("all masses must be positive")
    return torch.exp((w[:, None] - w[None, :]).abs() / w[:, None])


def _positive_mask(subject_ids) -> torch.Tensor:
    codes = {s: k for k, s in enumerate(dict.fromkeys(subject_ids))}
    ids = torch.tensor([codes[s] for s in subject_ids])
    same = ids[:, None] == ids[None, :]
    same.fill_diagonal_(False)
    return same


def masscon_loss_tensor(embeddings: torch.Tensor, subject_ids: Sequence, weights_kg=None,
                        tau: float = 0.1, penalty: bool = True) -> torch.Tensor:
    """Differentiable contrastive loss, summed over anchors.

    Positives of anchor ``i`` are the other samples of the same subject; the
    denominator runs over every sample except ``i``. With ``penalty`` each
    similarity is scaled by ``penalty_factor(M_i, M_j)`` inside the
    exponent; without it this is plain SupCon. Anchors with no positive
    contribute zero.
    """
    n = embeddings.shape[0]
    if n < 2:
        raise ValueError(f"contrastive loss needs at least 2 samples, got {n}")
    if len(subject_ids) != n:
        raise ValueError("subject_ids length does not match embeddings")
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if torch.isnan(embeddings).any():
        raise NumericError("NaN in embeddings")

    logits = embeddings @ embeddings.T / tau
    if penalty:
        if weights_kg is None or len(weights_kg) != n:
            raise ValueError("penalised loss needs one weight per sample")
        logits = logits * penalty_matrix(weights_kg).to(logits.dtype)
    eye = torch.eye(n, dtype=torch.bool)
    logits = logits.masked_fill(eye, float("-inf"))
    # logsumexp subtracts the row max internally
    log_prob = logits - torch.logsumexp(logits, dim=1, keepdim=True)

    pos = _positive_mask(list(subject_ids))
    n_pos = pos.sum(dim=1)
    pos_sum = torch.where(pos, log_prob, torch.zeros_like(log_prob)).sum(dim=1)
    has_pos = n_pos > 0
    per_anchor = torch.where(has_pos, -pos_sum / n_pos.clamp(min=1), torch.zeros_like(pos_sum))
    return per_anchor.sum()


def supcon_loss_tensor(embeddings, subject_ids, tau=0.1):
    return masscon_loss_tensor(embeddings, subject_ids, None, tau, penalty=False)


@dataclass
class ContrastiveBatch:
    embeddings: np.ndarray
    subject_ids: list
    weights_kg: np.ndarray
    tau: float = 0.1
    penalty_enabled: bool = True

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.weights_kg = np.asarray(self.weights_kg, dtype=np.float64)
        self.subject_ids = list(self.subject_ids)
        n = self.embeddings.shape[0]
        if n < 2:
            raise ValueError(f"a contrastive batch needs N >= 2, got {n}")
        if len(self.subject_ids) != n or self.weights_kg.shape != (n,):
            raise ValueError("embeddings, subject_ids and weights_kg must have equal length")
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if np.isnan(self.embeddings).any():
            raise NumericError("NaN in embeddings")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("embeddings must have unit L2 norm")


def masscon_loss(batch: ContrastiveBatch) -> float:
    emb = torch.from_numpy(batch.embeddings)
    loss = masscon_loss_tensor(emb, batch.subject_ids, batch.weights_kg, batch.tau, batch.penalty_enabled)
    return float(loss)


def mae_loss(pred, target):
    """Mean absolute error. Tensors in, tensor out; anything else gives a float."""
    if torch.is_tensor(pred) or torch.is_tensor(target):
        pred = torch.as_tensor(pred)
        target = torch.as_tensor(target, dtype=pred.dtype)
        if pred.shape != target.shape or pred.numel() == 0:
            raise ValueError(f"mae_loss needs equal non-empty shapes, got {tuple(pred.shape)} and {tuple(target.shape)}")
        return (pred - target).abs().mean()
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise ValueError(f"mae_loss needs equal non-empty lengths, got {p.shape} and {t.shape}")
    return float(np.mean(np.abs(p - t)))


@dataclass(frozen=True)
class LossBreakdown:
    l_mae: float
    l_con: float
    l_all: float
    lam: float


def overall_loss(l_mae, l_con, lam: float = 0.25):
    """``l_mae + lam * l_con``.

    Tensors pass through (so the result can be back-propagated); plain
    numbers come back as a :class:`LossBreakdown`.
    """
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    total = l_mae + lam * l_con
    if torch.is_tensor(total):
        return total
    return LossBreakdown(float(l_mae), float(l_con), float(total), float(lam))
