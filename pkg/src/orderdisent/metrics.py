"""Binary classification counts and the five table metrics (UC is the positive class)."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

METRIC_NAMES = ("precision", "recall", "f1", "specificity", "accuracy")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    """Percentages; ``None`` where the ratio is 0/0."""

    precision: float | None
    recall: float | None
    f1: float | None
    specificity: float | None
    accuracy: float | None

    def as_dict(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def row(self) -> list[str]:
        return [fmt_pct(getattr(self, name)) for name in METRIC_NAMES]


def fmt_pct(v: float | None) -> str:
    return "—" if v is None else f"{v:.2f}"


def confusion(predictions, truth) -> ConfusionCounts:
    p = np.asarray(predictions, dtype=int).ravel()
    y = np.asarray(truth, dtype=int).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} labels")
    if not (np.isin(p, (0, 1)).all() and np.isin(y, (0, 1)).all()):
        raise ValueError("labels must be binary (0/1)")
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
        tn=int(np.sum((p == 0) & (y == 0))),
    )


def _ratio(num, den):
    return None if den == 0 else 100.0 * num / den


def f1_from(precision: float | None, recall: float | None) -> float | None:
    if precision is None or recall is None:
        return None
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics(c: ConfusionCounts) -> MetricsReport:
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1_from(precision, recall),
        specificity=_ratio(c.tn, c.tn + c.fp),
        accuracy=_ratio(c.tp + c.tn, c.total),
    )


def evaluate_predictions(predictions, truth) -> MetricsReport:
    return metrics(confusion(predictions, truth))
