"""Accuracy, macro-F1 and confusion matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray              # rows = true class, cols = predicted
    per_class_f1: np.ndarray
    absent_classes: list = field(default_factory=list)

    @property
    def n(self):
        return int(self.confusion.sum())

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "absent_classes": list(self.absent_classes),
        }


def confusion_matrix(true, pred, n_classes=3):
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise ArgumentError(f"label vectors differ in length: {true.shape} vs {pred.shape}")
    for arr in (true, pred):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ArgumentError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def compute_metrics(true, pred, n_classes=3) -> MetricsReport:
    """Accuracy, unweighted per-class-mean F1 and confusion matrix.

    A class missing from both ``true`` and ``pred`` scores F1 = 0 and is
    listed in ``absent_classes``.
    """
    cm = confusion_matrix(true, pred, n_classes)
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    denom = support + predicted
    f1 = np.where(denom > 0, 2.0 * tp / np.where(denom > 0, denom, 1), 0.0)
    absent = [c for c in range(n_classes) if denom[c] == 0]
    acc = float(tp.sum() / total) if total else 0.0
    return MetricsReport(acc, float(f1.mean()), cm, f1, absent)


def aggregate(reports):
    """Mean and (population) std of accuracy and macro-F1 across folds."""
    acc = np.array([r.accuracy for r in reports])
    f1 = np.array([r.macro_f1 for r in reports])
    return {
        "accuracy_mean": float(acc.mean()),
        "accuracy_std": float(acc.std()),
        "macro_f1_mean": float(f1.mean()),
        "macro_f1_std": float(f1.std()),
        "folds": len(reports),
    }
