"""Binary confusion matrix and macro F1."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int = 2) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def macro_f1(confusion) -> tuple[float, list[float]]:
    """Unweighted mean of per-class F1; any 0/0 counts as 0.

    Returns ``(macro, per_class)``.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix entries must be non-negative")
    if cm.sum() == 0:
        raise ValueError("confusion matrix is all zeros")
    per_class = []
    for c in range(cm.shape[0]):
        tp = int(cm[c, c])
        precision = _ratio(tp, int(cm[:, c].sum()))
        recall = _ratio(tp, int(cm[c, :].sum()))
        per_class.append(_ratio(2 * precision * recall, precision + recall))
    return sum(per_class) / len(per_class), per_class


@dataclass
class MetricsReport:
    confusion: list[list[int]]
    per_class_f1: list[float]
    macro_f1: float
    accuracy: float
    mode: str
    latency_ms: dict | None = None

    @classmethod
    def from_predictions(cls, y_true, y_pred, mode: str) -> "MetricsReport":
        cm = confusion_matrix(y_true, y_pred)
        macro, per_class = macro_f1(cm)
        return cls(cm.tolist(), per_class, macro, float(np.trace(cm) / cm.sum()), mode)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion,
            "per_class_f1": self.per_class_f1,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "mode": self.mode,
            "latency_ms": self.latency_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"
