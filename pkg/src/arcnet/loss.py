"""Training objective over per-A-line class scores.

``total = 0.5 * CE + 0.5 * soft 1-D Dice + lam * TV``

Logits are ``(theta, C)`` for one frame or ``(B, theta, C)`` for a batch;
labels are integer tensors of matching leading shape. Batched calls return the
mean of the per-frame values.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

TV_WEIGHT = 5e-4
DICE_EPS = 1e-6


@dataclass
class LossBreakdown:
    ce: torch.Tensor
    dice: torch.Tensor
    tv: torch.Tensor
    total: torch.Tensor
    lam: float = TV_WEIGHT

    def as_floats(self):
        return {k: float(getattr(self, k)) for k in ("ce", "dice", "tv", "total")}


def _batched(x, y=None):
    if x.dim() == 2:
        x = x.unsqueeze(0)
        if y is not None:
            y = y.unsqueeze(0)
    if x.dim() != 3:
        raise ValueError(f"logits must be (theta, C) or (B, theta, C), got {tuple(x.shape)}")
    if y is not None:
        y = torch.as_tensor(y, dtype=torch.long)
        if y.shape != x.shape[:2]:
            raise ValueError(f"labels {tuple(y.shape)} do not match logits {tuple(x.shape)}")
        if y.numel() and (y.min() < 0 or y.max() >= x.shape[-1]):
            raise ValueError("label out of range")
    return x, y


def _reduce(per_frame, reduction):
    if reduction == "none":
        return per_frame
    return per_frame.mean()


def cross_entropy(x, y, reduction="mean"):
    x, y = _batched(x, y)
    logp = F.log_softmax(x, dim=-1)
    nll = -logp.gather(-1, y.unsqueeze(-1)).squeeze(-1)
    return _reduce(nll.mean(-1), reduction)


def soft_dice(x, y, eps=DICE_EPS, reduction="mean"):
    """One minus the class-averaged soft Dice ratio of each frame.

    A class absent from both prediction and reference scores a ratio of 1
    through ``eps``.
    """
    x, y = _batched(x, y)
    p = F.softmax(x, dim=-1)
    onehot = F.one_hot(y, x.shape[-1]).to(p.dtype)
    inter = (p * onehot).sum(1)
    false_pos = (p * (1 - onehot)).sum(1)
    false_neg = ((1 - p) * onehot).sum(1)
    ratio = (2 * inter + eps) / (2 * inter + false_pos + false_neg + eps)
    return _reduce(1 - ratio.mean(-1), reduction)


def total_variation(x, reduction="mean"):
    """Class-averaged L1 norm of the circular forward difference along A-lines."""
    x, _ = _batched(x)
    if x.shape[1] < 2:
        raise ValueError("need at least 2 A-lines")
    diff = torch.roll(x, -1, dims=1) - x
    return _reduce(diff.abs().sum(1).mean(-1), reduction)


def combined(x, y, lam=TV_WEIGHT):
    ce = cross_entropy(x, y, reduction="none")
    dice = soft_dice(x, y, reduction="none")
    tv = total_variation(x, reduction="none")
    total = 0.5 * ce + 0.5 * dice + lam * tv
    return LossBreakdown(ce.mean(), dice.mean(), tv.mean(), total.mean(), lam)
