"""Training objective: mask BCE, dice, classification BCE, and their composite.

The composite is lambda_mask * L_mask + lambda_dice * L_dice +
lambda_bce * L_bce; the total adds lambda_mask_prime times the post-mask
term, a BCE against the flow/ground-truth intersection label. All pixel
losses are means, so values are resolution-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

__all__ = [
    "LossWeights", "bce_mask_loss", "dice_loss", "class_bce_loss",
    "avs_loss", "post_mask_loss", "total_loss", "PROB_CLAMP", "DICE_EPS",
]

PROB_CLAMP = 1e-7
DICE_EPS = 1.0


@dataclass(frozen=True)
class LossWeights:
    lambda_mask: float = 5.0
    lambda_dice: float = 5.0
    lambda_bce: float = 2.0
    lambda_mask_prime: float = 10.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"LossWeights.{name} must be >= 0, got {v}")


def _check_match(pred: Tensor, target: np.ndarray, op: str) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"{op}: pred shape {pred.shape} vs target {target.shape}")
    return target


def _bce(pred: Tensor, target: np.ndarray) -> Tensor:
    p = ad.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = Tensor(target)
    one_minus_t = Tensor(1.0 - target)
    pos = ad.mul(t, ad.log(p))
    neg = ad.mul(one_minus_t, ad.log(ad.sub(Tensor(1.0), p)))
    return ad.scale(ad.mean(ad.add(pos, neg)), -1.0)


def bce_mask_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of predicted probabilities against a mask.

    Probabilities are clamped to [1e-7, 1 - 1e-7] so the loss stays finite.
    """
    target = _check_match(pred, target, "bce_mask_loss")
    return _bce(pred, target)


def dice_loss(pred: Tensor, target) -> Tensor:
    """Soft dice loss 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps), eps = 1."""
    target = _check_match(pred, target, "dice_loss")
    inter = ad.tsum(ad.mul(pred, Tensor(target)))
    num = ad.add(ad.scale(inter, 2.0), Tensor(DICE_EPS))
    den = ad.add(ad.add(ad.tsum(pred), Tensor(float(target.sum()))), Tensor(DICE_EPS))
    return ad.sub(Tensor(1.0), ad.div(num, den))


def class_bce_loss(logits: Tensor, labels) -> Tensor:
    """Mean sigmoid BCE of class logits against multi-hot labels."""
    labels = _check_match(logits, labels, "class_bce_loss")
    return _bce(ad.sigmoid(logits), labels)


def avs_loss(m: Tensor, d: Tensor, b: Tensor, w: LossWeights) -> Tensor:
    """Weighted composite of the mask, dice, and classification terms."""
    out = ad.add(ad.scale(m, w.lambda_mask), ad.scale(d, w.lambda_dice))
    return ad.add(out, ad.scale(b, w.lambda_bce))


def post_mask_loss(pred: Tensor, m_post) -> Tensor:
    """BCE of predicted probabilities against the intersection label."""
    m_post = _check_match(pred, m_post, "post_mask_loss")
    return _bce(pred, m_post)


def total_loss(avs: Tensor, post: Tensor, w: LossWeights) -> Tensor:
    """Composite plus lambda_mask_prime times the post-mask term."""
    return ad.add(avs, ad.scale(post, w.lambda_mask_prime))
