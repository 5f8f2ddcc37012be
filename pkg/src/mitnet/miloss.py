"""Feature embedding heads and the mutual-information minimization loss.

Embeddings are turned into discrete distributions with a softmax; the loss is
then evaluated in closed form from two cross-entropies and two KL terms.
"""
from typing import Dict, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import NEG_SLOPE, zero_biases

LOG_FLOOR = 1e-8


class EmbeddingHead(nn.Module):
    """Two 3x3 convs, global average pool, two fully connected layers.

    The convs use stride 2: the global pool follows anyway, and full-resolution
    64-channel convs would dominate the training step.
    """

    def __init__(self, in_channels, hidden=64, d_emb=128):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, hidden, 3, 2, 1)
        self.conv2 = nn.Conv2d(hidden, hidden, 3, 2, 1)
        self.fc1 = nn.Linear(hidden, d_emb)
        self.fc2 = nn.Linear(d_emb, d_emb)
        self.act = nn.LeakyReLU(NEG_SLOPE)
        self.d_emb = d_emb
        zero_biases(self)

    def forward(self, features):
        x = self.act(self.conv1(features))
        x = self.act(self.conv2(x))
        x = x.mean(dim=(2, 3))
        return self.fc2(self.act(self.fc1(x)))


def _log(p):
    return torch.clamp(p, min=LOG_FLOOR).log()


def mi_terms(v_d: torch.Tensor, v_e: torch.Tensor) -> Dict[str, torch.Tensor]:
    """Per-sample cross-entropy, KL and entropy terms for a pair of embeddings.

    ``v_d`` and ``v_e`` are (d,) or (batch, d); softmax is taken over the last dim.
    """
    if v_d.shape != v_e.shape:
        raise ValueError(f"embedding shapes differ: {tuple(v_d.shape)} vs {tuple(v_e.shape)}")
    if not (torch.isfinite(v_d).all() and torch.isfinite(v_e).all()):
        raise ValueError("embedding contains NaN or Inf values")
    p = F.softmax(v_d, dim=-1)
    q = F.softmax(v_e, dim=-1)
    log_p, log_q = _log(p), _log(q)
    return {
        "ce_pq": -(p * log_q).sum(-1),  # G_{v_e}(v_d)
        "ce_qp": -(q * log_p).sum(-1),  # G_{v_d}(v_e)
        "kl_pq": (p * (log_p - log_q)).sum(-1),
        "kl_qp": (q * (log_q - log_p)).sum(-1),
        "h_p": -(p * log_p).sum(-1),
        "h_q": -(q * log_q).sum(-1),
    }


def mi_loss(v_d: torch.Tensor, v_e: torch.Tensor, check: bool = True) -> torch.Tensor:
    """Cross-entropies minus KLs, averaged over the batch.

    Algebraically this equals H(p) + H(q); ``check`` asserts that identity.
    """
    t = mi_terms(v_d, v_e)
    loss = t["ce_pq"] + t["ce_qp"] - t["kl_pq"] - t["kl_qp"]
    if check:
        with torch.no_grad():
            ent = t["h_p"] + t["h_q"]
            gap = (loss - ent).abs().max().item()
            tol = 1e-4 * (1.0 + ent.abs().max().item()) if loss.dtype != torch.float64 else 1e-9
            if gap > tol:
                raise AssertionError(f"four-term MI loss departs from entropy sum by {gap:.3g}")
    return loss.mean()


def multi_scale_mi(v_d: Sequence[torch.Tensor], v_e: Sequence[torch.Tensor], n_scales: int = 3) -> torch.Tensor:
    """Sum of ``mi_loss`` over paired scales."""
    if v_d is None or v_e is None or len(v_d) != n_scales or len(v_e) != n_scales:
        raise ValueError(f"need embeddings at {n_scales} scales on both sides")
    if any(v is None for v in list(v_d) + list(v_e)):
        raise ValueError("missing embedding at one of the scales")
    return sum(mi_loss(d, e) for d, e in zip(v_d, v_e))


def embedding_cosine(v_d: Sequence[torch.Tensor], v_e: Sequence[torch.Tensor]) -> float:
    """Mean cosine similarity between paired scale embeddings."""
    sims = [F.cosine_similarity(d, e, dim=-1).mean() for d, e in zip(v_d, v_e)]
    return torch.stack(sims).mean().item()
