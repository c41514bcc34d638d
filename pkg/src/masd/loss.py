"""Training objectives: cosine similarity, InfoNCE alignment, cross-entropy.

All functions accept numpy arrays or autodiff Tensors and return Tensors, so
they serve both the training graph and plain numeric evaluation (via
``.item()``). Softmax-style terms are stabilized by subtracting the per-row
maximum, which is treated as a constant (the gradients are unchanged).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import autodiff as ad
from .net.autodiff import Tensor

ZERO_ROW_EPS = 1e-12


@dataclass
class LossConfig:
    tau: float = 0.01
    lambda_t: float = 1.0
    lambda_s: float = 1.0

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError("loss.tau must be > 0")
        if self.lambda_t < 0 or self.lambda_s < 0:
            raise ValueError("lambda weights must be >= 0")


def _normalize_rows(z: Tensor) -> Tensor:
    sq = (z * z).sum(axis=1, keepdims=True)
    if np.any(sq.data < ZERO_ROW_EPS**2):
        raise ValueError("zero-norm row cannot be cosine-normalized")
    return z / ad.sqrt(sq)


def cosine_sim_matrix(a, b) -> Tensor:
    """Pairwise cosine similarities: entry (i, j) compares row i of a with row j of b."""
    a, b = ad.wrap(a), ad.wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"expected matching 2-D inputs, got {a.shape} and {b.shape}")
    return _normalize_rows(a) @ ad.transpose(_normalize_rows(b), (1, 0))


def info_nce(zb, zm, tau: float) -> Tensor:
    """Contrastive loss anchored on brain features.

    Row i of ``zm`` must hold the modality feature matched to trial i; all
    other rows in the batch act as negatives, including duplicates of the
    same word.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    zb, zm = ad.wrap(zb), ad.wrap(zm)
    n = zb.shape[0]
    if zm.shape[0] != n:
        raise ValueError(f"batch sizes differ: {zb.shape[0]} vs {zm.shape[0]}")
    sims = cosine_sim_matrix(zb, zm) / tau
    shifted = sims - Tensor(sims.data.max(axis=1, keepdims=True))
    lse = ad.log(ad.exp(shifted).sum(axis=1, keepdims=True))
    matched = (shifted * Tensor(np.eye(n))).sum(axis=1, keepdims=True)
    return (lse - matched).mean()


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log softmax probability of the labeled class."""
    logits = ad.wrap(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    shifted = logits - Tensor(logits.data.max(axis=1, keepdims=True))
    lse = ad.log(ad.exp(shifted).sum(axis=1, keepdims=True))
    picked = (shifted * Tensor(onehot)).sum(axis=1, keepdims=True)
    return (lse - picked).mean()


def total_loss(ce, lt, ls, cfg: LossConfig) -> Tensor:
    """Weighted objective: ce + lambda_t * lt + lambda_s * ls."""
    cfg.validate()
    return ad.wrap(ce) + cfg.lambda_t * ad.wrap(lt) + cfg.lambda_s * ad.wrap(ls)
