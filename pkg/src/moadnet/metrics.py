"""Classification metrics and fold-level aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLASSIFICATION_KEYS = ("f1_macro", "f1_micro", "precision_macro", "recall_macro")
SURVIVAL_KEYS = ("c_index",)


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def classification_scores(pred, truth, n_classes: int | None = None) -> dict[str, float]:
    """Per-class precision/recall/F1 averaged over classes seen in truth or pred.

    Empty denominators count as 0. Micro scores use global counts.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"pred has {pred.size} entries but truth has {truth.size}")
    if n_classes is not None and pred.size and max(pred.max(), truth.max()) >= n_classes:
        raise ValueError(f"label out of range for {n_classes} classes")
    classes = np.union1d(pred, truth)
    precision, recall, f1 = [], [], []
    for c in classes:
        tp = float(np.sum((pred == c) & (truth == c)))
        fp = float(np.sum((pred == c) & (truth != c)))
        fn = float(np.sum((pred != c) & (truth == c)))
        p = _safe_div(tp, tp + fp)
        r = _safe_div(tp, tp + fn)
        precision.append(p)
        recall.append(r)
        f1.append(_safe_div(2 * p * r, p + r))
    tp_all = float(np.sum(pred == truth))
    # single-label: global FP == global FN, so micro P == R == F1 == accuracy
    micro = _safe_div(tp_all, pred.size)
    return {
        "f1_macro": float(np.mean(f1)) if f1 else 0.0,
        "f1_micro": micro,
        "precision_macro": float(np.mean(precision)) if precision else 0.0,
        "recall_macro": float(np.mean(recall)) if recall else 0.0,
    }


@dataclass
class MetricsReport:
    """Metric values per fold plus their mean and standard deviation."""

    task: str
    folds: list[dict[str, float]] = field(default_factory=list)

    @property
    def keys(self) -> tuple[str, ...]:
        return CLASSIFICATION_KEYS if self.task == "subtype" else SURVIVAL_KEYS

    def mean(self, key: str) -> float:
        return float(np.mean([f[key] for f in self.folds]))

    def std(self, key: str) -> float:
        return float(np.std([f[key] for f in self.folds]))

    def __getitem__(self, key: str) -> float:
        return self.mean(key)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "folds": self.folds,
            "mean": {k: self.mean(k) for k in self.keys},
            "std": {k: self.std(k) for k in self.keys},
        }

    def summary(self) -> str:
        return ", ".join(f"{k} {self.mean(k):.3f} ± {self.std(k):.3f}" for k in self.keys)


def evaluate_classification(pred, truth, n_classes: int | None = None) -> MetricsReport:
    return MetricsReport("subtype", [classification_scores(pred, truth, n_classes)])


def auroc(scores, positive) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    if scores.shape != positive.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_s = scores[order]
    # average ranks over tie groups
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_s)) + 1]
    ends = np.r_[starts[1:], scores.size]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b + 1)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
