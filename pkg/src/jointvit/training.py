"""Mini-batch training of the dual-head ViT under the joint loss."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import autodiff as ad
from .data import AugmentPolicy, Dataset
from .errors import ConfigError, ContractError, TrainingDiverged
from .losses import JointLossConfig, LossVariant, joint_loss_terms, one_hot
from .model import ViTConfig, ViTParams, forward, predict_instance

logger = logging.getLogger(__name__)

LOG_HEADER = ("step", "epoch", "joint_loss", "bce_loss", "mse_loss", "grad_norm")


@dataclass
class OptimizerConfig:
    lr: float = 3e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 1.0

    def validate(self) -> "OptimizerConfig":
        b1, b2 = self.betas
        if self.lr <= 0 or not (0 <= b1 < 1 and 0 <= b2 < 1) or self.weight_decay < 0 or self.eps <= 0:
            raise ConfigError(f"invalid optimizer settings: {self}")
        return self

    def to_dict(self) -> dict:
        return {"lr": self.lr, "betas": list(self.betas), "eps": self.eps,
                "weight_decay": self.weight_decay, "clip_norm": self.clip_norm}


@dataclass
class TrainConfig:
    model: ViTConfig = field(default_factory=ViTConfig)
    loss: JointLossConfig = field(default_factory=JointLossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 10
    batch_size: int = 16
    max_steps: Optional[int] = None
    balance: bool = True
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)


class AdamW:
    """Adam with decoupled weight decay on matrix-shaped parameters."""

    def __init__(self, params: ViTParams, cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg.validate()
        self.t = 0
        self.m = {n: np.zeros(p.shape) for n, p in params.items()}
        self.v = {n: np.zeros(p.shape) for n, p in params.items()}

    def step(self) -> None:
        c = self.cfg
        b1, b2 = c.betas
        self.t += 1
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if c.weight_decay and p.ndim >= 2:
                p.data *= 1.0 - c.lr * c.weight_decay
            p.data -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def clip_gradients(params: ViTParams, max_norm: float) -> float:
    """Scale gradients to a global L2 norm of at most ``max_norm``; return the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if max_norm and max_norm > 0 and total > max_norm:
        f = max_norm / (total + 1e-12)
        for p in params:
            p.grad = p.grad * f
    return total


def flatten_slices(dataset: Dataset):
    """Stack every slice as its own example carrying the instance labels."""
    xs, ys, vs = [], [], []
    for inst in dataset.instances:
        for s in inst.slices:
            xs.append(s)
            ys.append(inst.label)
            vs.append(inst.value_target)
    if not xs:
        raise ContractError("cannot train on an empty dataset")
    return np.stack(xs), np.asarray(ys, dtype=int), np.asarray(vs, dtype=np.float64)


@dataclass
class TrainState:
    params: ViTParams
    optimizer: AdamW
    rng: np.random.Generator
    step: int = 0
    epoch: int = 0
    history: List[tuple] = field(default_factory=list)


def new_state(cfg: TrainConfig, params: ViTParams, seed: int) -> TrainState:
    return TrainState(params, AdamW(params, cfg.optimizer), np.random.default_rng(seed))


def effective_loss_config(cfg: TrainConfig, dataset: Dataset) -> JointLossConfig:
    """Fill Bal-BCE class counts from the data actually trained on, if unset."""
    loss = cfg.loss
    if loss.variant is LossVariant.BAL_BCE and not loss.class_counts:
        loss = JointLossConfig(loss.lam, loss.variant, dataset.count_classes())
    return loss


def train(cfg: TrainConfig, dataset: Dataset, state: TrainState,
          on_step: Optional[Callable[[tuple], None]] = None) -> TrainState:
    """Run ``cfg.epochs`` epochs (capped at ``cfg.max_steps`` total steps).

    ``state`` is advanced in place and returned. Every optimiser step emits a
    row ``(step, epoch, joint, bce, mse, grad_norm)`` to ``on_step`` and
    ``state.history``. A non-finite loss or gradient raises
    :class:`TrainingDiverged`.
    """
    if cfg.epochs <= 0 or (cfg.max_steps is not None and state.step >= cfg.max_steps):
        return state
    if cfg.batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    loss_cfg = effective_loss_config(cfg, dataset)
    X, labels, values = flatten_slices(dataset)
    Y = one_hot(labels, cfg.model.num_classes)
    n = len(X)
    params = state.params
    for _ in range(cfg.epochs):
        order = state.rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                return state
            idx = order[start:start + cfg.batch_size]
            with ad.Graph() as g:
                logits, value = forward(params, X[idx], train_mode=True, rng=state.rng)
                terms = joint_loss_terms(logits, value, Y[idx], values[idx], loss_cfg)
                ad.backward(g, terms.joint, params)
            joint = terms.joint.item()
            norm = clip_gradients(params, cfg.optimizer.clip_norm)
            if not (math.isfinite(joint) and math.isfinite(norm)):
                raise TrainingDiverged(
                    f"non-finite loss at step {state.step + 1}: loss={joint} "
                    f"lr={cfg.optimizer.lr} grad_norm={norm}"
                )
            state.optimizer.step()
            state.step += 1
            row = (state.step, state.epoch + 1, joint, terms.classification.item(),
                   terms.regression.item(), norm)
            state.history.append(row)
            if on_step is not None:
                on_step(row)
        state.epoch += 1
        logger.debug("epoch %d done at step %d, last loss %.6f", state.epoch, state.step, joint)
    return state


def predict_dataset(params: ViTParams, dataset: Dataset) -> np.ndarray:
    return np.array([predict_instance(params, inst)[0] for inst in dataset.instances], dtype=int)


def train_accuracy(params: ViTParams, dataset: Dataset) -> float:
    preds = predict_dataset(params, dataset)
    return float(np.mean(preds == dataset.labels)) if len(dataset) else float("nan")
