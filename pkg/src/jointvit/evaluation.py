"""Metrics, k-fold protocol and the lambda / loss-variant ablation.

Sensitivity and specificity are macro one-vs-rest averages over classes.
A classifier that always predicts one class on a three-class problem scores
exactly 1/3 sensitivity and 2/3 specificity under this convention.
Fold statistics use the population standard deviation (divide by k).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .data import Dataset, balance_augment
from .errors import ContractError, JointViTError
from .losses import JointLossConfig, LossVariant
from .model import init_params
from .training import TrainConfig, new_state, predict_dataset, train

logger = logging.getLogger(__name__)

METRICS_HEADER = ("fold", "lambda", "variant", "accuracy", "sensitivity", "specificity")
CURVE_HEADER = ("lambda", "variant", "metric", "mean", "std")
DEFAULT_LAMBDA_GRID = (0.8, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99, 1.0)
METRIC_NAMES = ("accuracy", "sensitivity", "specificity")


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def true_positives(self) -> np.ndarray:
        return np.diag(self.counts)

    def false_negatives(self) -> np.ndarray:
        return self.counts.sum(axis=1) - np.diag(self.counts)

    def false_positives(self) -> np.ndarray:
        return self.counts.sum(axis=0) - np.diag(self.counts)

    def true_negatives(self) -> np.ndarray:
        return self.total - self.counts.sum(axis=0) - self.counts.sum(axis=1) + np.diag(self.counts)


def confusion_matrix(preds: Sequence[int], labels: Sequence[int], num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ContractError(f"preds and labels must be equal-length vectors, got {preds.shape} and {labels.shape}")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ContractError(f"{name} index out of range for {num_classes} classes")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ContractError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def per_class_recall(cm: ConfusionMatrix) -> np.ndarray:
    pos = cm.counts.sum(axis=1)
    if np.any(pos == 0):
        missing = [int(c) for c in np.flatnonzero(pos == 0)]
        raise ContractError(f"classes {missing} have no true instances; stratify the folds")
    return cm.true_positives() / pos


def per_class_specificity(cm: ConfusionMatrix) -> np.ndarray:
    tn, fp = cm.true_negatives(), cm.false_positives()
    neg = tn + fp
    if np.any(neg == 0):
        missing = [int(c) for c in np.flatnonzero(neg == 0)]
        raise ContractError(f"classes {missing} have no negative instances")
    return tn / neg


def macro_sensitivity(cm: ConfusionMatrix) -> float:
    return float(np.mean(per_class_recall(cm)))


def macro_specificity(cm: ConfusionMatrix) -> float:
    return float(np.mean(per_class_specificity(cm)))


@dataclass
class MetricsReport:
    accuracy: float
    macro_sensitivity: float
    macro_specificity: float
    per_class_recall: List[float]
    per_class_specificity: List[float]
    fold_id: int = 0
    confusion: Optional[List[List[int]]] = None

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_report(cm: ConfusionMatrix, fold_id: int = 0) -> MetricsReport:
    rec, spec = per_class_recall(cm), per_class_specificity(cm)
    return MetricsReport(
        accuracy=accuracy(cm),
        macro_sensitivity=float(np.mean(rec)),
        macro_specificity=float(np.mean(spec)),
        per_class_recall=[float(x) for x in rec],
        per_class_specificity=[float(x) for x in spec],
        fold_id=fold_id,
        confusion=cm.counts.tolist(),
    )


def evaluate_predictions(preds, labels, num_classes: int, fold_id: int = 0) -> MetricsReport:
    return metrics_report(confusion_matrix(preds, labels, num_classes), fold_id)


def evaluate_predictor(predict: Callable, dataset: Dataset, num_classes: int, fold_id: int = 0) -> MetricsReport:
    """Score any ``instance -> class index`` callable on ``dataset``."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    preds = [int(predict(inst)) for inst in dataset.instances]
    return evaluate_predictions(preds, dataset.labels, num_classes, fold_id)


def evaluate_params(params, dataset: Dataset, fold_id: int = 0) -> MetricsReport:
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    preds = predict_dataset(params, dataset)
    return evaluate_predictions(preds, dataset.labels, params.config.num_classes, fold_id)


def summarize(reports: Sequence[MetricsReport]) -> Dict[str, Dict[str, float]]:
    """Mean and population std of each headline metric over folds."""
    out = {}
    for name, attr in zip(METRIC_NAMES, ("accuracy", "macro_sensitivity", "macro_specificity")):
        vals = np.array([getattr(r, attr) for r in reports], dtype=np.float64)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=0))}
    return out


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

def kfold_split(instance_ids: Sequence[str], k: int = 3, seed: int = 0,
                labels: Optional[Sequence[int]] = None) -> List[List[str]]:
    """Shuffle and deal ids into ``k`` folds whose sizes differ by at most one.

    When ``labels`` are given and every class has at least ``k`` members, ids
    are dealt class by class so each fold gets a near-equal share of every
    class. Otherwise the split is unstratified.
    """
    ids = list(instance_ids)
    n = len(ids)
    if k < 2:
        raise ContractError(f"k must be >= 2, got {k}")
    if n < k:
        raise ContractError(f"cannot split {n} instances into {k} folds")
    if len(set(ids)) != n:
        raise ContractError("instance ids must be unique")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(n)]
    if labels is not None:
        lab = dict(zip(ids, np.asarray(labels, dtype=int).tolist()))
        classes = sorted(set(lab.values()))
        if all(sum(1 for v in lab.values() if v == c) >= k for c in classes):
            order = [i for c in classes for i in order if lab[i] == c]
    folds: List[List[str]] = [[] for _ in range(k)]
    for pos, iid in enumerate(order):
        folds[pos % k].append(iid)
    return folds


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(fold)]).generate_state(1)[0])


@dataclass
class FoldData:
    train: Dataset
    test: Dataset


def fold_datasets(dataset: Dataset, folds: List[List[str]], fold: int, cfg: TrainConfig, seed: int) -> FoldData:
    """Training side (balanced if configured) and untouched test side of one fold."""
    originals = [i for i in dataset.instances if not i.is_augmented]
    if len(originals) != len(dataset.instances):
        raise ContractError("cross-validation expects a dataset of original instances only")
    test_ids = set(folds[fold])
    test = dataset.subset([i for i in dataset.ids if i in test_ids], provenance=dataset.provenance)
    train_set = dataset.subset([i for i in dataset.ids if i not in test_ids], provenance=dataset.provenance)
    if cfg.balance:
        train_set = balance_augment(train_set, cfg.policy, fold_seed(seed, fold))
    test_sources = {i.source_id for i in test.instances}
    if any(i.is_augmented for i in test.instances) or any(
        i.source_id in test_sources for i in train_set.instances
    ):
        raise ContractError(f"fold {fold}: leakage between training and test instances")
    return FoldData(train_set, test)


def train_fold(cfg: TrainConfig, train_set: Dataset, seed: int, fold: int):
    s = fold_seed(seed, fold)
    params = init_params(cfg.model, s)
    state = new_state(cfg, params, s)
    train(cfg, train_set, state)
    return state


@dataclass
class CVResult:
    reports: List[MetricsReport]
    aggregate: Dict[str, Dict[str, float]]
    folds: List[List[str]]
    lam: float = 0.0
    variant: str = "bce"
    train_ids: List[List[str]] = field(default_factory=list)

    def rows(self) -> List[tuple]:
        return [(r.fold_id, self.lam, self.variant, r.accuracy, r.macro_sensitivity, r.macro_specificity)
                for r in self.reports]


def run_cv(dataset: Dataset, cfg: TrainConfig, k: int = 3, seed: int = 0,
           folds: Optional[List[List[str]]] = None) -> CVResult:
    """Train on k-1 folds, evaluate on the held-out fold, k times.

    Balancing augmentation touches only the training side. Folds run in
    index order; each fold's model and augmentation are seeded from
    ``(seed, fold)`` so every configuration sees identical randomness.
    """
    if folds is None:
        folds = kfold_split(dataset.ids, k, seed, dataset.labels)
    reports, train_ids = [], []
    for f in range(len(folds)):
        try:
            fd = fold_datasets(dataset, folds, f, cfg, seed)
            state = train_fold(cfg, fd.train, seed, f)
            reports.append(evaluate_params(state.params, fd.test, fold_id=f))
        except JointViTError as e:
            raise type(e)(f"fold {f}: {e}") from e
        train_ids.append(fd.train.ids)
        logger.info("fold %d: acc=%.4f sens=%.4f spec=%.4f", f, reports[-1].accuracy,
                    reports[-1].macro_sensitivity, reports[-1].macro_specificity)
    return CVResult(reports, summarize(reports), folds, float(cfg.loss.lam), cfg.loss.variant.value, train_ids)


@dataclass
class AblationResult:
    lam: float
    variant: str
    summary: Dict[str, Dict[str, float]]
    reports: List[MetricsReport]
    folds: List[List[str]]

    def rows(self) -> List[tuple]:
        return [(r.fold_id, self.lam, self.variant, r.accuracy, r.macro_sensitivity, r.macro_specificity)
                for r in self.reports]


def run_ablation(dataset: Dataset, cfg: TrainConfig, lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
                 variants: Sequence = (LossVariant.BCE,), k: int = 3, seed: int = 0) -> List[AblationResult]:
    """Full cross-validation for every (variant, lambda) cell on shared folds."""
    if not lambda_grid:
        raise ContractError("lambda grid is empty")
    if not variants:
        raise ContractError("no loss variants given")
    folds = kfold_split(dataset.ids, k, seed, dataset.labels)
    results = []
    for variant in variants:
        variant = LossVariant(variant)
        for lam in lambda_grid:
            cell = replace(cfg, loss=JointLossConfig(float(lam), variant, None))
            cv = run_cv(dataset, cell, k, seed, folds=folds)
            results.append(AblationResult(float(lam), variant.value, cv.aggregate, cv.reports, cv.folds))
    return results


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_metrics_csv(rows: Sequence[tuple], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def curve_rows(results: Sequence[AblationResult]) -> List[tuple]:
    """Long-format ``lambda,variant,metric,mean,std`` rows for plotting."""
    out = []
    for r in results:
        for m in METRIC_NAMES:
            out.append((r.lam, r.variant, m, r.summary[m]["mean"], r.summary[m]["std"]))
    return out


def write_curve_csv(results: Sequence[AblationResult], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for row in curve_rows(results):
            w.writerow([_fmt(v) for v in row])
    return path


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
