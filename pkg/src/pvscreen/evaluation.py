"""Train/test splitting and classification metrics.

Conventions: a precision, recall or F1 whose denominator is zero is reported
as 0 and flagged in ``EvaluationReport.warnings``; one-vs-rest AUC for a
class lacking positives or negatives is ``None``.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import extract_features
from .severity import grade, predict_score
from .taxonomy import NUM_CLASSES, DefectClass
from .vit import predict_proba


def stratified_split(labels, train_fraction: float = 0.7, seed: int = 0):
    """Return sorted ``(train_idx, test_idx)`` index lists.

    Each class keeps ``floor(f * n_c)`` items for training (at least one
    when ``n_c >= 2``); leftover slots up to ``floor(f * N)`` are handed out
    by largest fractional remainder, lowest class code first on ties.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    labels = [int(v) for v in labels]
    by_class = defaultdict(list)
    for i, c in enumerate(labels):
        by_class[c].append(i)
    classes = sorted(by_class)
    rng = np.random.default_rng(seed)
    shuffled = {c: [by_class[c][k] for k in rng.permutation(len(by_class[c]))] for c in classes}

    quota, room, remainder = {}, {}, {}
    for c in classes:
        n_c = len(by_class[c])
        exact = train_fraction * n_c
        q = math.floor(exact + 1e-9)
        if n_c >= 2:
            q = max(q, 1)
        quota[c] = q
        room[c] = (n_c - 1 if n_c >= 2 else n_c) - q
        remainder[c] = exact - q
    target = math.floor(train_fraction * len(labels) + 1e-9)
    for c in sorted(classes, key=lambda c: (-remainder[c], c)):
        if sum(quota.values()) >= target:
            break
        if room[c] > 0 and remainder[c] > 0:
            quota[c] += 1

    train = sorted(i for c in classes for i in shuffled[c][:quota[c]])
    test = sorted(i for c in classes for i in shuffled[c][quota[c]:])
    return train, test


def confusion_matrix(true_labels, predicted_labels, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts with rows = true class and columns = predicted class."""
    t = np.asarray(true_labels, dtype=np.intp).ravel()
    p = np.asarray(predicted_labels, dtype=np.intp).ravel()
    if t.shape != p.shape:
        raise ValueError("true and predicted labels differ in length")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= num_classes):
        raise ValueError(f"labels must lie in 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def precision_recall_f1(confusion):
    cm = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(cm)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return precision, recall, f1


def macro_f1(confusion) -> float:
    """Unweighted mean F1 over all classes; absent classes contribute 0."""
    return float(precision_recall_f1(confusion)[2].mean())


def accuracy(confusion) -> float:
    cm = np.asarray(confusion)
    n = cm.sum()
    return float(np.trace(cm) / n) if n else 0.0


def binary_auc(scores, positives) -> float | None:
    """Mann-Whitney AUC: concordant pairs plus half the ties over all pos/neg pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    pos, neg = scores[positives], scores[~positives]
    if len(pos) == 0 or len(neg) == 0:
        return None
    greater = 0
    ties = 0
    # chunked to bound memory at O(chunk * n_neg)
    for start in range(0, len(pos), 1024):
        diff = pos[start:start + 1024, None] - neg[None, :]
        greater += int(np.count_nonzero(diff > 0))
        ties += int(np.count_nonzero(diff == 0))
    return (greater + 0.5 * ties) / (len(pos) * len(neg))


def roc_auc_ovr(scores, true_labels, num_classes: int = NUM_CLASSES) -> list:
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(true_labels, dtype=np.intp)
    if scores.ndim != 2 or scores.shape != (len(y), num_classes):
        raise ValueError(f"scores must have shape ({len(y)}, {num_classes})")
    return [binary_auc(scores[:, c], y == c) for c in range(num_classes)]


def roc_curve(scores, positives):
    """ROC vertices ``(fpr, tpr)`` with one point per distinct score threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], positives[order]
    last_of_run = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last_of_run]
    fp = np.cumsum(~y)[last_of_run]
    n_pos, n_neg = max(int(y.sum()), 1), max(int((~y).sum()), 1)
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos]


@dataclass
class EvaluationReport:
    n_samples: int
    accuracy: float
    per_class_precision: list
    per_class_recall: list
    per_class_f1: list
    macro_f1: float
    confusion: list
    per_class_auc: list
    warnings: list = field(default_factory=list)
    severity_mse: float | None = None
    severity_grade_accuracy: float | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["class_names"] = [c.slug for c in DefectClass]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"samples      {self.n_samples}",
            f"accuracy     {self.accuracy:.4f}",
            f"macro F1     {self.macro_f1:.4f}",
        ]
        if self.severity_mse is not None:
            lines.append(f"severity MSE {self.severity_mse:.4f}")
        if self.severity_grade_accuracy is not None:
            lines.append(f"grade acc.   {self.severity_grade_accuracy:.4f}")
        lines += ["", f"{'class':<18}{'prec':>8}{'recall':>8}{'f1':>8}{'auc':>8}{'support':>9}"]
        support = np.asarray(self.confusion).sum(axis=1)
        for c in DefectClass:
            auc = self.per_class_auc[c]
            auc_s = "n/a" if auc is None else f"{auc:.4f}"
            lines.append(f"{c.slug:<18}{self.per_class_precision[c]:>8.4f}{self.per_class_recall[c]:>8.4f}"
                         f"{self.per_class_f1[c]:>8.4f}{auc_s:>8}{int(support[c]):>9}")
        lines += ["", "confusion (rows = true, columns = predicted)"]
        lines += [" ".join(f"{v:4d}" for v in row) for row in self.confusion]
        if self.warnings:
            lines += ["", "warnings:"] + [f"  - {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"


def evaluate_predictions(true_labels, probabilities, num_classes: int = NUM_CLASSES) -> EvaluationReport:
    """Assemble every classification metric from labels and class scores."""
    y = np.asarray(true_labels, dtype=np.intp)
    probs = np.asarray(probabilities, dtype=np.float64).reshape(len(y), num_classes)
    pred = probs.argmax(axis=1) if len(y) else np.zeros(0, dtype=np.intp)
    cm = confusion_matrix(y, pred, num_classes)
    precision, recall, f1 = precision_recall_f1(cm)
    warnings = []
    if len(y) == 0:
        warnings.append("empty test set: all metrics set to 0")
    col, row = cm.sum(axis=0), cm.sum(axis=1)
    if len(y):
        if np.any(col == 0):
            warnings.append(f"precision undefined (set to 0) for classes {np.nonzero(col == 0)[0].tolist()}")
        if np.any(row == 0):
            warnings.append(f"recall undefined (set to 0) for classes {np.nonzero(row == 0)[0].tolist()}")
    aucs = roc_auc_ovr(probs, y, num_classes) if len(y) else [None] * num_classes
    missing = [c for c, a in enumerate(aucs) if a is None]
    if missing and len(y):
        warnings.append(f"AUC undefined for classes {missing}")
    return EvaluationReport(
        n_samples=int(len(y)),
        accuracy=accuracy(cm),
        per_class_precision=precision.tolist(),
        per_class_recall=recall.tolist(),
        per_class_f1=f1.tolist(),
        macro_f1=float(f1.mean()),
        confusion=cm.tolist(),
        per_class_auc=aucs,
        warnings=warnings,
    )


def severity_metrics(forest, images, predicted, targets):
    """``(mse, grade_accuracy)`` over items whose target grade is not None."""
    errs, hits = [], []
    for img, cls, target in zip(images, predicted, targets):
        if target is None:
            continue
        score = predict_score(forest, extract_features(img, DefectClass(int(cls))))
        errs.append((score - int(target)) ** 2)
        hits.append(int(grade(score, forest.grade_thresholds)) == int(target))
    if not errs:
        return None, None
    return float(np.mean(errs)), float(np.mean(hits))


def evaluate(model, forest, test_set, severity_targets=None) -> EvaluationReport:
    """Classify every ``(RgbImage, label)`` in ``test_set`` and report.

    When ``forest`` and per-item ``severity_targets`` (grade codes, ``None``
    where unknown) are given, severity MSE and grade accuracy are added.
    """
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    images = [img for img, _ in test_set]
    probs = predict_proba(model, images)
    report = evaluate_predictions([int(lbl) for _, lbl in test_set], probs)
    if forest is not None and severity_targets is not None:
        report.severity_mse, report.severity_grade_accuracy = severity_metrics(
            forest, images, probs.argmax(axis=1), severity_targets)
    return report
