"""Loss terms and their combination.

All terms take probabilities (already softmax/sigmoid normalized) and
clamp them to [1e-7, 1 - 1e-7] inside the logarithms.  The keyword loss
is the prior-weighted binary cross entropy

    -(1/C) * sum_i  lambda_i z_i ln p_i + gamma_i (1 - z_i) ln(1 - p_i)

with lambda_i = 1/p(z_i) and gamma_i = 1/(1 - p(z_i)); priors are clamped
away from {0, 1} so the weights stay finite.  The keyword terms decay by
(1 - 1e-4)^s over optimizer steps s, the length term carries a fixed 1e-2
weight, and under mix-up every term is evaluated against both items'
labels and blended by beta / (1 - beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .text import CooccurrenceTable

PROB_EPS = 1e-7
KEYWORD_DECAY = 1.0 - 1e-4
LENGTH_WEIGHT = 1e-2
PARAM2_META_WEIGHT = 0.8


def _safe_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(PROB_EPS, 1.0 - PROB_EPS))


@dataclass
class KeywordPriors:
    """Per-keyword prior probabilities and the derived BCE weights."""

    probs: np.ndarray    # p(z_i), clamped into (0, 1)
    lam: np.ndarray      # 1 / p(z_i)
    gamma: np.ndarray    # 1 / (1 - p(z_i))

    @classmethod
    def from_counts(cls, counts: np.ndarray, n_train: int) -> "KeywordPriors":
        if n_train <= 0:
            raise ValueError("need at least one training sample for priors")
        lo = 1.0 / (2.0 * n_train)
        p = np.clip(np.asarray(counts, dtype=np.float64) / n_train, lo, 1.0 - lo)
        return cls(p, 1.0 / p, 1.0 / (1.0 - p))

    @classmethod
    def uniform(cls, size: int) -> "KeywordPriors":
        p = np.full(size, 0.5)
        return cls(p, 1.0 / p, 1.0 / (1.0 - p))


def word_loss(posteriors: torch.Tensor, targets: torch.Tensor, pad_id: int,
              smoothing: float = 0.1) -> torch.Tensor:
    """Label-smoothed cross entropy averaged over non-PAD positions.

    posteriors: (..., N, C) probabilities; targets: (..., N) ids.
    """
    logp = _safe_log(posteriors)
    nll = -logp.gather(-1, targets.unsqueeze(-1).clamp(min=0)).squeeze(-1)
    if smoothing > 0:
        # target (1-eps)*onehot + eps/C: loss = (1-eps)*nll + eps*mean(-ln p)
        per_step = (1.0 - smoothing) * nll + smoothing * (-logp.mean(dim=-1))
    else:
        per_step = nll
    mask = (targets != pad_id).to(per_step.dtype)
    denom = mask.sum().clamp(min=1.0)
    return (per_step * mask).sum() / denom


def keyword_loss(p: torch.Tensor, z: torch.Tensor, priors: KeywordPriors) -> torch.Tensor:
    """Prior-weighted binary cross entropy over the keyword vocabulary."""
    lam = torch.as_tensor(priors.lam, dtype=p.dtype, device=p.device)
    gam = torch.as_tensor(priors.gamma, dtype=p.dtype, device=p.device)
    z = z.to(p.dtype)
    per_kw = lam * z * _safe_log(p) + gam * (1.0 - z) * _safe_log(1.0 - p)
    return -per_kw.mean(dim=-1).mean()


def keyword_loss_weight(step: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    return KEYWORD_DECAY ** step


def length_loss(p_len: torch.Tensor, length: torch.Tensor | int) -> torch.Tensor:
    """1e-2 * cross entropy against the one-hot sentence length."""
    return LENGTH_WEIGHT * length_cross_entropy(p_len, length)


def length_cross_entropy(p_len: torch.Tensor, length: torch.Tensor | int) -> torch.Tensor:
    l_max = p_len.shape[-1]
    length = torch.as_tensor(length, device=p_len.device).clamp(1, l_max)
    logp = _safe_log(p_len)
    return -logp.gather(-1, (length - 1).unsqueeze(-1)).squeeze(-1).mean()


def penalty_mask(meta_keywords: set[int], table: CooccurrenceTable) -> np.ndarray:
    """b_i = 1 iff word i sits in no co-occurrence list of the given keywords."""
    mask = np.ones(table.word_vocab_size, dtype=np.float64)
    for k in meta_keywords:
        for w in table.words_for(k):
            mask[w] = 0.0
    return mask


def cooccurrence_penalty(posteriors: torch.Tensor, mask: np.ndarray | torch.Tensor,
                         empty_keywords: bool = False) -> torch.Tensor:
    """(1/C) * sum_n sum_i |b_i * p(w_n = i)|; zero when no meta keywords."""
    if empty_keywords:
        return posteriors.new_zeros(())
    b = torch.as_tensor(mask, dtype=posteriors.dtype, device=posteriors.device)
    if b.dim() == posteriors.dim() - 1 and b.dim() > 1:
        b = b.unsqueeze(-2)  # (B, C) against (B, N, C)
    c = posteriors.shape[-1]
    per_item = (b * posteriors).abs().sum(dim=(-1, -2)) / c
    return per_item.mean()


@dataclass
class ItemLabels:
    """Targets of one training item for every loss term."""

    word_targets: torch.Tensor            # (N,) or (B, N) ids, decoder-aligned
    z_caption: torch.Tensor               # (C_key,) or (B, C_key) binary
    z_meta: torch.Tensor
    length: torch.Tensor | int
    penalty_mask: np.ndarray | torch.Tensor | None
    has_meta_keywords: bool = True


@dataclass
class LossBreakdown:
    word: float
    caption_kw: float
    meta_kw: float
    length: float              # raw cross entropy, weighted 1e-2 in the total
    cooccurrence: float
    total: float
    step: int

    def to_dict(self) -> dict:
        return {"step": self.step, "word": self.word, "caption_kw": self.caption_kw,
                "meta_kw": self.meta_kw, "length": self.length,
                "cooccurrence": self.cooccurrence, "total": self.total}


def _mix(a: torch.Tensor, b: torch.Tensor, beta: float) -> torch.Tensor:
    if beta == 1.0:
        return a
    return beta * a + (1.0 - beta) * b


def total_loss(outputs, posteriors: torch.Tensor, labels_a: ItemLabels,
               labels_b: ItemLabels | None, beta: float, step: int,
               caption_priors: KeywordPriors, meta_priors: KeywordPriors,
               pad_id: int, smoothing: float = 0.1,
               param2: bool = False) -> tuple[torch.Tensor, LossBreakdown]:
    """Blend every term over both items' labels, then apply the weights.

    ``outputs`` is the encoder output bundle (p_cap, p_meta, p_len);
    ``posteriors`` the (..., N, C_cap) teacher-forced decoder output.
    """
    if labels_b is None or beta == 1.0:
        labels_b = labels_a
        beta = 1.0

    def blended(fn):
        a = fn(labels_a)
        return a if beta == 1.0 else _mix(a, fn(labels_b), beta)

    word = blended(lambda l: word_loss(posteriors, l.word_targets, pad_id, smoothing))
    cap_kw = blended(lambda l: keyword_loss(outputs.p_caption_keywords, l.z_caption, caption_priors))
    if outputs.p_meta_keywords is not None:
        meta_kw = blended(lambda l: keyword_loss(outputs.p_meta_keywords, l.z_meta, meta_priors))
    else:
        meta_kw = posteriors.new_zeros(())
    length = blended(lambda l: length_cross_entropy(outputs.p_length, l.length))
    cooc = blended(lambda l: cooccurrence_penalty(
        posteriors, l.penalty_mask if l.penalty_mask is not None else 0.0,
        empty_keywords=not l.has_meta_keywords))

    w_kw = keyword_loss_weight(step)
    meta_weight = PARAM2_META_WEIGHT if param2 else 1.0
    total = word + w_kw * (cap_kw + meta_weight * meta_kw) + LENGTH_WEIGHT * length + cooc
    breakdown = LossBreakdown(*(float(t.detach()) for t in
                                (word, cap_kw, meta_kw, length, cooc, total)), step)
    return total, breakdown
