"""Pre-training and fine-tuning losses.

Feature maps use the convolution layout ``[B, D, T, H, W]`` (a single sample
may drop the batch axis).  Every space-time position is one "pixel" vector of
length ``D``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import (
    DegenerateMap,
    EmptyNegativeSet,
    InvalidConfig,
    LabelOutOfRange,
    ShapeMismatch,
)
from .sits_core import IGNORE_INDEX

ZERO_NORM_EPS = 1e-12

# Non-fatal numerical events (zero-norm vectors, fully ignored label maps).
diagnostics: Counter = Counter()


@dataclass
class LossConfig:
    tau: float = 0.5
    lam: float = 1.0
    max_negatives: int | None = None
    negative_scope: str = "within_sample"

    def validate(self) -> "LossConfig":
        if not self.tau > 0:
            raise InvalidConfig("tau must be > 0")
        if not self.lam >= 0:
            raise InvalidConfig("lambda must be >= 0")
        if self.max_negatives is not None and self.max_negatives < 1:
            raise InvalidConfig("max_negatives must be >= 1 when set")
        if self.negative_scope != "within_sample":
            raise InvalidConfig("only within_sample negatives are supported")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**d).validate()


def _unit(x: torch.Tensor) -> torch.Tensor:
    """L2-normalise along the last axis; zero-norm rows map to the zero vector."""
    norm = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    small = norm < ZERO_NORM_EPS
    if bool(small.any()):
        diagnostics["zero_norm"] += int(small.sum())
    return torch.where(small, torch.zeros_like(x), x / torch.where(small, torch.ones_like(norm), norm))


def cosine_sim(u, v) -> torch.Tensor:
    u = torch.as_tensor(u, dtype=torch.float64) if not torch.is_tensor(u) else u
    v = torch.as_tensor(v, dtype=torch.float64) if not torch.is_tensor(v) else v
    return (_unit(u) * _unit(v)).sum(-1)


def infonce_anchor(z_i, z_j, negatives, tau: float = 0.5) -> torch.Tensor:
    """InfoNCE for one anchor: positive ``z_j``, negatives stacked as rows of ``negatives``."""
    z_i, z_j = torch.as_tensor(z_i), torch.as_tensor(z_j)
    negatives = torch.as_tensor(negatives)
    if negatives.ndim == 1:
        negatives = negatives[None]
    if negatives.shape[0] == 0:
        raise EmptyNegativeSet("InfoNCE needs at least one negative")
    if not tau > 0:
        raise InvalidConfig("tau must be > 0")
    logits = torch.cat([cosine_sim(z_i, z_j).reshape(1), cosine_sim(z_i[None], negatives)]) / tau
    return torch.logsumexp(logits, dim=0) - logits[0]


def negative_mask(n: int, max_negatives: int | None, seed: int = 0) -> torch.Tensor | None:
    """Boolean ``[n, n]`` mask of kept logits (diagonal positive always kept).

    ``None`` means every off-diagonal entry is a negative.
    """
    if max_negatives is None or max_negatives >= n - 1:
        return None
    rng = np.random.default_rng(seed)
    mask = np.eye(n, dtype=bool)
    for i in range(n):
        candidates = np.delete(np.arange(n), i)
        mask[i, rng.choice(candidates, size=max_negatives, replace=False)] = True
    return torch.from_numpy(mask)


def _directional(sim: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    # sim: [B, N, N], rows are anchors, columns candidates, diagonal the positive
    if mask is not None:
        sim = sim.masked_fill(~mask.to(sim.device), float("-inf"))
    pos = torch.diagonal(sim, dim1=-2, dim2=-1)
    return (torch.logsumexp(sim, dim=-1) - pos).mean(dim=-1)


def mmst_contrastive(p_r: torch.Tensor, p_o: torch.Tensor, tau: float = 0.5,
                     max_negatives: int | None = None, seed: int = 0) -> torch.Tensor:
    """Pixel-wise cross-modal InfoNCE averaged over both anchor directions.

    The positive for a pixel of one map is the pixel at the same (t, h, w) of
    the other map; every other pixel of the other map is a negative.  The
    result is averaged over anchors, then over the two directions, then over
    the batch.
    """
    if p_r.shape != p_o.shape:
        raise ShapeMismatch(f"feature maps differ: {tuple(p_r.shape)} vs {tuple(p_o.shape)}")
    if p_r.ndim == 4:
        p_r, p_o = p_r[None], p_o[None]
    if p_r.ndim != 5:
        raise ShapeMismatch(f"expected [B, D, T, H, W], got {tuple(p_r.shape)}")
    B, D = p_r.shape[:2]
    n = p_r[0, 0].numel()
    if n < 2:
        raise DegenerateMap("feature map has a single space-time position; no negatives exist")

    z_r = _unit(p_r.reshape(B, D, n).transpose(1, 2))
    z_o = _unit(p_o.reshape(B, D, n).transpose(1, 2))
    sim = torch.bmm(z_r, z_o.transpose(1, 2)) / tau  # [B, n_r, n_o]

    mask_r = negative_mask(n, max_negatives, seed)
    mask_o = negative_mask(n, max_negatives, seed + 1)
    loss_r = _directional(sim, mask_r)
    loss_o = _directional(sim.transpose(1, 2), mask_o)
    return (0.5 * (loss_r + loss_o)).mean()


def cross_modal_reconstruction(x_hat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Mean absolute error: L1 norm divided by the element count."""
    if x_hat.shape != x.shape:
        raise ShapeMismatch(f"reconstruction {tuple(x_hat.shape)} vs target {tuple(x.shape)}")
    return (x_hat - x).abs().mean()


def joint_loss(loss_c, loss_r, lam: float = 1.0):
    return loss_c + lam * loss_r


def segmentation_ce(logits: torch.Tensor, label: torch.Tensor,
                    ignore_index: int = IGNORE_INDEX) -> torch.Tensor:
    """Cross-entropy averaged over non-ignored pixels.

    ``logits`` is ``[B, K, H, W]`` or ``[K, H, W]``; ``label`` drops the K axis.
    """
    if logits.ndim == 3:
        logits, label = logits[None], label[None]
    if logits.shape[:1] + logits.shape[2:] != label.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs label {tuple(label.shape)}")
    label = label.long()
    K = logits.shape[1]
    valid = label != ignore_index
    if bool(((label < 0) & valid).any()) or bool((label >= K).any()):
        raise LabelOutOfRange(f"labels must lie in [0, {K}) or equal {ignore_index}")
    count = int(valid.sum())
    if count == 0:
        diagnostics["all_ignored"] += 1
        return logits.sum() * 0.0
    logp = F.log_softmax(logits, dim=1)
    picked = torch.gather(logp, 1, torch.where(valid, label, 0)[:, None])[:, 0]
    return -(picked * valid).sum() / count
