import numpy as np
import pytest

from jointvit.errors import ContractError
from jointvit.evaluation import (
    CURVE_HEADER, METRICS_HEADER, DEFAULT_LAMBDA_GRID, accuracy, confusion_matrix, evaluate_predictions,
    kfold_split, macro_sensitivity, macro_specificity, run_ablation, run_cv, summarize, write_curve_csv,
    write_metrics_csv,
)
from jointvit.losses import JointLossConfig
from jointvit.model import ViTConfig
from jointvit.training import OptimizerConfig, TrainConfig

PLANTED = TrainConfig(model=ViTConfig(image_size=16, patch_size=4, embed_dim=16, depth=1, heads=2),
                      loss=JointLossConfig(0.99), optimizer=OptimizerConfig(lr=1e-3), epochs=60, batch_size=16)
QUICK = TrainConfig(model=PLANTED.model, epochs=1, batch_size=16)


def brute_force(preds, labels, C):
    """Per-sample tallies, no matrix."""
    correct = sum(p == t for p, t in zip(preds, labels))
    sens, spec = [], []
    for c in range(C):
        tp = sum(p == c and t == c for p, t in zip(preds, labels))
        fn = sum(p != c and t == c for p, t in zip(preds, labels))
        tn = sum(p != c and t != c for p, t in zip(preds, labels))
        fp = sum(p == c and t != c for p, t in zip(preds, labels))
        sens.append(tp / (tp + fn))
        spec.append(tn / (tn + fp))
    return correct / len(preds), sum(sens) / C, sum(spec) / C


class TestConfusion:
    def test_diagonal(self):
        cm = confusion_matrix([0, 0, 1, 1, 2, 2], [0, 0, 1, 1, 2, 2], 3)
        np.testing.assert_array_equal(cm.counts, np.diag([2, 2, 2]))

    def test_single_column(self):
        cm = confusion_matrix([1] * 6, [0, 1, 2, 0, 1, 2], 3)
        assert np.count_nonzero(cm.counts.sum(axis=0)) == 1 and cm.counts[:, 1].sum() == 6

    def test_random_against_counter(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n, C = int(rng.integers(1, 60)), int(rng.integers(2, 6))
            p, t = rng.integers(0, C, n), rng.integers(0, C, n)
            ref = np.zeros((C, C), dtype=int)
            for a, b in zip(t, p):
                ref[a, b] += 1
            np.testing.assert_array_equal(confusion_matrix(p, t, C).counts, ref)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            confusion_matrix([0, 3], [0, 1], 3)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            confusion_matrix([0, 1], [0], 3)


class TestMetrics:
    def test_perfect(self):
        cm = confusion_matrix([0, 1, 2], [0, 1, 2], 3)
        assert accuracy(cm) == macro_sensitivity(cm) == macro_specificity(cm) == 1.0

    def test_all_majority(self):
        labels = [0] * 9 + [1] * 35 + [2] * 13
        cm = confusion_matrix([1] * 57, labels, 3)
        assert accuracy(cm) == 35 / 57
        assert macro_sensitivity(cm) == 1 / 3
        assert macro_specificity(cm) == 2 / 3

    def test_hand_matrix(self):
        from jointvit.evaluation import ConfusionMatrix

        cm = ConfusionMatrix(np.array([[2, 1, 0], [0, 3, 0], [1, 0, 1]]))
        assert abs(macro_sensitivity(cm) - (2 / 3 + 1 + 1 / 2) / 3) < 1e-15
        preds = [0, 0, 1, 1, 1, 1, 0, 2]
        labels = [0, 0, 0, 1, 1, 1, 2, 2]
        np.testing.assert_array_equal(confusion_matrix(preds, labels, 3).counts, cm.counts)
        _, _, spec = brute_force(preds, labels, 3)
        assert abs(macro_specificity(cm) - spec) < 1e-15
        assert abs(spec - (4 / 5 + 4 / 5 + 1) / 3) < 1e-15

    def test_random_uniform_accuracy(self):
        rng = np.random.default_rng(0)
        n = 100_000
        labels = np.arange(n) % 3
        assert abs(accuracy(confusion_matrix(rng.integers(0, 3, n), labels, 3)) - 1 / 3) < 0.02

    def test_empty(self):
        with pytest.raises(ContractError):
            accuracy(confusion_matrix([], [], 3))

    def test_missing_class(self):
        with pytest.raises(ContractError):
            macro_sensitivity(confusion_matrix([0, 1], [0, 1], 3))

    def test_population_std(self):
        reps = [evaluate_predictions([0, 1, 2], [0, 1, 2], 3), evaluate_predictions([0, 0, 0], [0, 1, 2], 3)]
        s = summarize(reps)
        assert s["accuracy"]["mean"] == pytest.approx(2 / 3)
        assert s["accuracy"]["std"] == pytest.approx(1 / 3)


class TestFolds:
    def test_57_into_3(self):
        folds = kfold_split([f"i{j}" for j in range(57)], 3, 0)
        assert [len(f) for f in folds] == [19, 19, 19]

    @pytest.mark.parametrize("n,k", [(3, 3), (10, 3), (57, 5), (101, 2)])
    def test_partition(self, n, k):
        ids = [f"i{j}" for j in range(n)]
        labels = np.arange(n) % 3
        folds = kfold_split(ids, k, 7, labels)
        flat = [i for f in folds for i in f]
        assert sorted(flat) == sorted(ids) and len(set(flat)) == n
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1

    def test_stratified(self):
        ids = [f"i{j}" for j in range(57)]
        labels = [0] * 9 + [1] * 30 + [2] * 18
        folds = kfold_split(ids, 3, 0, labels)
        lab = dict(zip(ids, labels))
        for f in folds:
            assert [sum(lab[i] == c for i in f) for c in range(3)] == [3, 10, 6]

    def test_deterministic(self):
        ids = [f"i{j}" for j in range(20)]
        assert kfold_split(ids, 3, 4) == kfold_split(ids, 3, 4)
        assert kfold_split(ids, 3, 4) != kfold_split(ids, 3, 5)

    def test_too_few(self):
        with pytest.raises(ContractError):
            kfold_split(["a", "b"], 3, 0)


class TestProtocol:
    def test_planted_marker_is_learned(self, marker_dataset):
        res = run_cv(marker_dataset, PLANTED, 3, 0)
        assert res.aggregate["accuracy"]["mean"] == 1.0
        assert res.aggregate["accuracy"]["std"] == 0.0

    def test_no_augmented_test_instances(self, marker_dataset):
        res = run_cv(marker_dataset, QUICK, 3, 0)
        by_id = marker_dataset.by_id()
        for fold, train_ids in zip(res.folds, res.train_ids):
            assert not any(by_id[i].is_augmented for i in fold)
            sources = {t.split("#")[0] for t in train_ids}
            assert not sources & set(fold)

    def test_augmented_input_rejected(self, marker_dataset):
        from jointvit.data import balance_augment

        with pytest.raises(ContractError):
            run_cv(balance_augment(marker_dataset), QUICK, 3, 0)

    def test_single_lambda_grid_equals_cv(self, marker_dataset):
        cfg = TrainConfig(model=QUICK.model, loss=JointLossConfig(1.0), epochs=1, batch_size=16)
        cv = run_cv(marker_dataset, cfg, 3, 0)
        (abl,) = run_ablation(marker_dataset, cfg, [1.0], ["bce"], 3, 0)
        assert abl.rows() == cv.rows()

    def test_default_grid(self, marker_dataset, tmp_path):
        cfg = TrainConfig(model=QUICK.model, epochs=0)
        results = run_ablation(marker_dataset, cfg, DEFAULT_LAMBDA_GRID, ["bce"], 3, 0)
        assert [r.lam for r in results] == list(DEFAULT_LAMBDA_GRID)
        assert all(r.folds == results[0].folds for r in results)
        rows = [row for r in results for row in r.rows()]
        write_metrics_csv(rows, tmp_path / "a.csv")
        write_curve_csv(results, tmp_path / "c.csv")
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert lines[0] == ",".join(METRICS_HEADER) and len(lines) == 1 + 8 * 3
        curve = (tmp_path / "c.csv").read_text().splitlines()
        assert curve[0] == ",".join(CURVE_HEADER) and len(curve) == 1 + 8 * 3

    def test_empty_grid(self, marker_dataset):
        with pytest.raises(ContractError):
            run_ablation(marker_dataset, QUICK, [], ["bce"])
