"""Classification, regression and joint supervision losses.

The joint objective weights a per-class sigmoid binary cross-entropy on the
class logits against a mean squared error on the predicted value::

    L = lam * bce(logits, onehot) + (1 - lam) * mse(value, target)

Value targets are SaO2 fractions (percent / 100).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

DEFAULT_LAMBDA = 0.99


class LossVariant(str, enum.Enum):
    BCE = "bce"
    BAL_BCE = "bal_bce"


@dataclass
class JointLossConfig:
    lam: float = DEFAULT_LAMBDA
    variant: LossVariant = LossVariant.BCE
    class_counts: Optional[Sequence[int]] = None

    def __post_init__(self):
        self.variant = LossVariant(self.variant)
        if self.class_counts is not None:
            self.class_counts = [int(c) for c in self.class_counts]
        self.validate()

    def validate(self) -> "JointLossConfig":
        if not (0.0 <= float(self.lam) <= 1.0):
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        # bal_bce counts may stay unset here; training fills them from its data
        if self.class_counts is not None and any(c <= 0 for c in self.class_counts):
            raise ConfigError(f"class counts must be positive, got {self.class_counts}")
        return self

    def to_dict(self) -> dict:
        return {"lam": float(self.lam), "variant": self.variant.value,
                "class_counts": None if self.class_counts is None else list(self.class_counts)}


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DimensionError(f"class index out of range for {num_classes} classes")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _targets(targets, shape) -> np.ndarray:
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if y.shape != shape:
        raise DimensionError(f"target shape {y.shape} does not match prediction shape {shape}")
    return y


def bce_loss(class_logits: Tensor, targets) -> Tensor:
    """Mean over all ``B*C`` entries of the sigmoid cross-entropy.

    Each term is ``softplus(z) - y*z``, i.e.
    ``-[y log sigmoid(z) + (1-y) log(1 - sigmoid(z))]`` without overflow.
    """
    if class_logits.ndim != 2:
        raise DimensionError(f"bce_loss: logits must be B x C, got {class_logits.shape}")
    y = _targets(targets, class_logits.shape)
    terms = ad.sub(ad.softplus(class_logits), ad.mul(class_logits, Tensor(y)))
    return ad.mean(terms)


def mse_loss(value_pred: Tensor, targets) -> Tensor:
    y = _targets(targets, value_pred.shape)
    diff = ad.sub(value_pred, Tensor(y))
    return ad.mean(ad.mul(diff, diff))


def prior_logit_offsets(class_counts: Sequence[int]) -> np.ndarray:
    """``log(pi) - log(1 - pi)`` per class, ``pi`` the empirical class prior."""
    n = np.asarray(class_counts, dtype=np.float64)
    if n.ndim != 1 or np.any(n <= 0):
        raise ConfigError(f"class counts must be positive, got {list(class_counts)}")
    pi = n / n.sum()
    return np.log(pi) - np.log1p(-pi)


def bal_bce_loss(class_logits: Tensor, targets, class_counts: Sequence[int]) -> Tensor:
    """BCE on prior-adjusted logits ``z + log(pi) - log(1 - pi)``.

    With equal counts and two classes the offset is exactly zero and the
    result is identical to :func:`bce_loss`.
    """
    offsets = prior_logit_offsets(class_counts)
    if class_logits.ndim != 2 or offsets.shape[0] != class_logits.shape[1]:
        raise DimensionError(
            f"bal_bce_loss: {len(offsets)} class counts for logits of shape {class_logits.shape}"
        )
    if np.all(offsets == 0.0):
        return bce_loss(class_logits, targets)
    return bce_loss(ad.add_bias(class_logits, Tensor(offsets)), targets)


def combine(cls_loss: Tensor, val_loss: Tensor, lam: float) -> Tensor:
    """``lam * cls_loss + (1 - lam) * val_loss``."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lam}")
    return ad.add(ad.scale(cls_loss, lam), ad.scale(val_loss, 1.0 - lam))


def classification_loss(class_logits: Tensor, cls_targets, cfg: JointLossConfig) -> Tensor:
    if cfg.variant is LossVariant.BAL_BCE:
        if not cfg.class_counts:
            raise ConfigError("bal_bce needs class_counts")
        return bal_bce_loss(class_logits, cls_targets, cfg.class_counts)
    return bce_loss(class_logits, cls_targets)


@dataclass
class LossTerms:
    joint: Tensor
    classification: Tensor
    regression: Tensor
    extra: dict = field(default_factory=dict)


def joint_loss_terms(class_logits, value_pred, cls_targets, val_targets, cfg: JointLossConfig) -> LossTerms:
    cfg.validate()
    c = classification_loss(class_logits, cls_targets, cfg)
    r = mse_loss(value_pred, val_targets)
    return LossTerms(combine(c, r, cfg.lam), c, r)


def joint_loss(class_logits, value_pred, cls_targets, val_targets, cfg: JointLossConfig) -> Tensor:
    return joint_loss_terms(class_logits, value_pred, cls_targets, val_targets, cfg).joint
