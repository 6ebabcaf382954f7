"""Finite-difference verification of the full joint-loss gradient on a micro model."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import autodiff as ad
from .losses import JointLossConfig, joint_loss, one_hot
from .model import ViTConfig, ViTParams, forward, init_params

MICRO_CONFIG = ViTConfig(image_size=8, patch_size=4, channels=1, embed_dim=8, depth=1,
                         heads=2, mlp_ratio=4, num_classes=3)
THRESHOLD = 1e-3
CLASS_HEAD = ("head_class.weight", "head_class.bias")
VALUE_HEAD = ("head_value.weight", "head_value.bias")


@dataclass
class GradCheckResult:
    lam: float
    max_rel_error: float
    worst_tensor: str
    class_head_grad: float
    value_head_grad: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        ok = self.max_rel_error < THRESHOLD
        if self.lam == 1.0:
            ok = ok and self.value_head_grad == 0.0
        if self.lam == 0.0:
            ok = ok and self.class_head_grad == 0.0
        return ok


def micro_problem(seed: int = 0, batch: int = 2, config: ViTConfig = MICRO_CONFIG):
    """Randomised micro model plus a small labelled batch.

    Parameters are re-drawn around their initial values with a larger spread
    than the training initialiser so that every path carries signal.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    for p in params:
        p.data = p.data + rng.normal(0.0, 0.3, p.shape)
    x = rng.uniform(0.0, 1.0, (batch, config.image_size, config.image_size, config.channels))
    labels = rng.integers(0, config.num_classes, batch)
    y_cls = one_hot(labels, config.num_classes)
    y_val = rng.uniform(0.89, 1.0, batch)
    return params, x, y_cls, y_val


def check_lambda(params: ViTParams, x, y_cls, y_val, lam: float, eps: float = 1e-4) -> GradCheckResult:
    cfg = JointLossConfig(lam=lam)

    def f():
        logits, value = forward(params, x)
        return joint_loss(logits, value, y_cls, y_val, cfg)

    t0 = time.perf_counter()
    report = ad.grad_check_detailed(f, list(params), eps)
    worst = max(report, key=lambda r: r[1])
    grads = {p.name: g for p, _, g in report}
    head = lambda names: float(max(np.max(np.abs(grads[n])) for n in names))  # noqa: E731
    return GradCheckResult(lam, worst[1], worst[0].name, head(CLASS_HEAD), head(VALUE_HEAD),
                           time.perf_counter() - t0)


def run_gradcheck(seed: int = 0, lambdas: Sequence[float] = (0.0, 0.5, 1.0)) -> List[GradCheckResult]:
    params, x, y_cls, y_val = micro_problem(seed)
    return [check_lambda(params, x, y_cls, y_val, lam) for lam in lambdas]
