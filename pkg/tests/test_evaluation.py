import json
from collections import Counter

import numpy as np
import pytest

from pvscreen.evaluation import (
    EvaluationReport, accuracy, binary_auc, confusion_matrix, evaluate, evaluate_predictions, macro_f1,
    precision_recall_f1, roc_auc_ovr, roc_curve, stratified_split,
)
from pvscreen.imaging import RgbImage
from pvscreen.severity import ForestConfig, fit_forest
from pvscreen.vit import ViTConfig, init_model

TRUE_12 = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]
PRED_12 = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 0, 0]


def one_hot(pred, n=9):
    p = np.zeros((len(pred), n))
    p[np.arange(len(pred)), pred] = 1.0
    return p


def trapezoid_auc(scores, positives):
    """Area under the empirical ROC by the trapezoid rule, ties merged into one step."""
    pairs = sorted(zip(scores, positives), key=lambda t: -t[0])
    n_pos = sum(positives)
    n_neg = len(positives) - n_pos
    tpr, fpr = [0.0], [0.0]
    tp = fp = 0
    i = 0
    while i < len(pairs):
        j = i
        while j < len(pairs) and pairs[j][0] == pairs[i][0]:
            tp += pairs[j][1]
            fp += 1 - pairs[j][1]
            j += 1
        tpr.append(tp / n_pos)
        fpr.append(fp / n_neg)
        i = j
    return sum((fpr[k + 1] - fpr[k]) * (tpr[k + 1] + tpr[k]) / 2 for k in range(len(fpr) - 1))


class TestSplit:
    def test_balanced_1500(self):
        labels = [c for c in range(9) for _ in range(167 if c < 6 else 166)]
        train, test = stratified_split(labels, 0.7, seed=0)
        assert (len(train), len(test)) == (1050, 450)
        counts = Counter(labels[i] for i in train)
        assert [counts[c] for c in range(9)] == [117] * 6 + [116] * 3

    def test_ten_items(self):
        train, test = stratified_split([0] * 5 + [1] * 5, 0.7)
        assert (len(train), len(test)) == (7, 3)
        assert stratified_split([3] * 10, 0.7)[0].__len__() == 7

    def test_partition_and_sorted(self, rng):
        labels = rng.integers(0, 9, 203).tolist()
        train, test = stratified_split(labels, 0.7, seed=5)
        assert sorted(train + test) == list(range(203))
        assert train == sorted(train) and test == sorted(test)

    def test_every_class_both_sides(self, rng):
        labels = rng.integers(0, 9, 100).tolist()
        train, test = stratified_split(labels, 0.7, seed=1)
        for c in set(labels):
            if labels.count(c) >= 2:
                assert any(labels[i] == c for i in train) and any(labels[i] == c for i in test)

    def test_proportions(self, rng):
        labels = rng.integers(0, 9, 900).tolist()
        train, _ = stratified_split(labels, 0.7, seed=2)
        counts = Counter(labels[i] for i in train)
        for c in range(9):
            assert abs(counts[c] - 0.7 * labels.count(c)) < 1.0

    def test_deterministic(self):
        labels = [k % 9 for k in range(90)]
        assert stratified_split(labels, seed=4) == stratified_split(labels, seed=4)
        assert stratified_split(labels, seed=4) != stratified_split(labels, seed=5)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            stratified_split([0, 1], 1.0)


class TestConfusionAndF1:
    def test_confusion(self):
        cm = confusion_matrix([0, 1, 1, 2], [0, 2, 1, 2], 3)
        np.testing.assert_array_equal(cm, [[1, 0, 0], [0, 1, 1], [0, 0, 1]])

    def test_empty(self):
        cm = confusion_matrix([], [])
        assert cm.shape == (9, 9) and cm.sum() == 0
        assert accuracy(cm) == 0.0 and macro_f1(cm) == 0.0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            confusion_matrix([0], [9])

    def test_twelve_sample_fixture(self):
        cm = confusion_matrix(TRUE_12, PRED_12)
        precision, recall, f1 = precision_recall_f1(cm)
        assert accuracy(cm) == pytest.approx(2 / 3)
        np.testing.assert_allclose(precision[:3], [3 / 5, 3 / 4, 2 / 3])
        np.testing.assert_allclose(recall[:3], [3 / 4, 3 / 4, 1 / 2])
        np.testing.assert_allclose(f1[:3], [2 / 3, 3 / 4, 4 / 7])
        assert macro_f1(cm) == pytest.approx((2 / 3 + 3 / 4 + 4 / 7) / 9, abs=1e-12)

    def test_one_class_always_wrong(self):
        true = [c for c in range(9) for _ in range(2)]
        pred = [1 if c == 0 else c for c in true]
        assert macro_f1(confusion_matrix(true, pred)) == pytest.approx(23 / 27, abs=1e-12)

    def test_perfect(self):
        y = list(range(9)) * 3
        cm = confusion_matrix(y, y)
        assert accuracy(cm) == 1.0 and macro_f1(cm) == 1.0


class TestAuc:
    def test_matches_trapezoid_with_ties(self, rng):
        for _ in range(10):
            scores = np.round(rng.random(200), 1)
            pos = rng.random(200) < 0.3
            assert binary_auc(scores, pos) == pytest.approx(trapezoid_auc(scores.tolist(), pos.tolist()), abs=1e-12)

    def test_curve_area(self, rng):
        scores = np.round(rng.random(150), 2)
        pos = rng.random(150) < 0.5
        fpr, tpr = roc_curve(scores, pos)
        area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
        assert area == pytest.approx(binary_auc(scores, pos), abs=1e-12)
        assert (fpr[-1], tpr[-1]) == (1.0, 1.0)

    def test_monotone_transform_invariant(self, rng):
        scores = rng.random(100)
        pos = rng.random(100) < 0.4
        assert binary_auc(np.exp(3 * scores) - 7, pos) == binary_auc(scores, pos)

    def test_extremes(self):
        assert binary_auc([0.9, 0.8, 0.1], [True, True, False]) == 1.0
        assert binary_auc([0.1, 0.8, 0.9], [True, False, False]) == 0.0
        assert binary_auc([0.5] * 4, [True, False, True, False]) == 0.5

    def test_undefined(self):
        assert binary_auc([0.1, 0.2], [False, False]) is None
        assert binary_auc([0.1, 0.2], [True, True]) is None

    def test_ovr_shape_check(self):
        with pytest.raises(ValueError):
            roc_auc_ovr(np.zeros((3, 4)), [0, 1, 2])


class TestReport:
    def test_twelve_sample_report(self):
        report = evaluate_predictions(TRUE_12, one_hot(PRED_12))
        assert report.n_samples == 12
        assert report.accuracy == pytest.approx(2 / 3)
        assert report.macro_f1 == pytest.approx((2 / 3 + 3 / 4 + 4 / 7) / 9, abs=1e-12)
        assert report.per_class_auc[3:] == [None] * 6
        assert any("AUC undefined" in w for w in report.warnings)
        assert any("recall undefined" in w for w in report.warnings)

    def test_invariants(self, rng):
        y = rng.integers(0, 9, 80)
        probs = rng.dirichlet(np.ones(9), 80)
        r = evaluate_predictions(y, probs)
        assert np.asarray(r.confusion).sum() == 80
        assert r.accuracy == pytest.approx(np.trace(r.confusion) / 80)
        assert r.macro_f1 == pytest.approx(np.mean(r.per_class_f1))
        assert all(a is None or 0.0 <= a <= 1.0 for a in r.per_class_auc)

    def test_empty(self):
        r = evaluate_predictions([], np.zeros((0, 9)))
        assert r.n_samples == 0 and r.accuracy == 0.0 and r.warnings

    def test_serialization(self):
        r = evaluate_predictions(TRUE_12, one_hot(PRED_12))
        r.severity_mse = 0.25
        data = json.loads(r.to_json())
        assert data["class_names"][0] == "physical_damage"
        assert data["per_class_auc"][5] is None
        text = r.to_text()
        assert "macro F1" in text and "severity MSE 0.2500" in text and "n/a" in text

    def test_dataclass_fields(self):
        names = set(EvaluationReport.__dataclass_fields__)
        assert {"accuracy", "macro_f1", "per_class_auc", "confusion", "severity_mse"} <= names


class TestEvaluate:
    def test_end_to_end(self, rng):
        cfg = ViTConfig(image_size=8, patch_size=4, hidden_dim=8, num_layers=1, num_heads=2, mlp_dim=8)
        model = init_model(cfg, rng)
        test_set = [(RgbImage(rng.random((10, 10, 3))), k % 9) for k in range(18)]
        forest = fit_forest(rng.random((20, 7)), rng.integers(0, 3, 20).astype(float), ForestConfig(n_trees=3))
        r = evaluate(model, forest, test_set, [k % 3 for k in range(17)] + [None])
        assert r.n_samples == 18
        assert r.severity_mse is not None and 0.0 <= r.severity_grade_accuracy <= 1.0

    def test_empty(self, rng):
        model = init_model(ViTConfig(image_size=8, patch_size=4, hidden_dim=8, num_layers=1, num_heads=2,
                                     mlp_dim=8), rng)
        with pytest.raises(ValueError):
            evaluate(model, None, [])
