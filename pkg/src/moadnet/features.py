"""Variability-based feature selection for high-dimensional omic matrices."""
from __future__ import annotations

import numpy as np


class SelectionError(ValueError):
    """The requested number of features cannot be selected."""


def variability_statistics(matrix) -> dict[str, np.ndarray]:
    """Per-column variance, coefficient of variation, MAD and IQR.

    A zero-mean column with nonzero spread has infinite CV; a constant
    column has CV 0.
    """
    x = np.asarray(matrix, dtype=np.float64)
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    std = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        cv = np.where(std == 0, 0.0, std / np.abs(mean))
    med = np.median(x, axis=0)
    mad = np.median(np.abs(x - med), axis=0)
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    return {"variance": var, "cv": cv, "mad": mad, "iqr": q75 - q25}


def _ranking(values: np.ndarray) -> np.ndarray:
    # descending; stable sort keeps the lower index first on ties
    return np.argsort(-values, kind="stable")


def select_cpg_features(matrix, k: int) -> np.ndarray:
    """Indices (ascending) of ``k`` highly variable features.

    Features are ranked by variance, CV, MAD and IQR. The shortlist size
    ``m`` is the smallest for which the four top-``m`` sets share at least
    ``k`` members; among those, the ``k`` with largest variance are kept.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise SelectionError(f"expected samples x features matrix, got shape {x.shape}")
    n_feat = x.shape[1]
    if not 1 <= k <= n_feat:
        raise SelectionError(f"k must lie in [1, {n_feat}], got {k}")
    stats = variability_statistics(x)
    # position of every feature in each ranking; feature is in top-m iff position < m
    positions = []
    for values in stats.values():
        pos = np.empty(n_feat, dtype=np.int64)
        pos[_ranking(values)] = np.arange(n_feat)
        positions.append(pos)
    # smallest m such that #{f: max_s pos_s(f) < m} >= k
    worst = np.max(positions, axis=0)
    m = int(np.sort(worst)[k - 1]) + 1
    members = np.flatnonzero(worst < m)
    if len(members) < k:
        raise SelectionError(f"intersection has {len(members)} < {k} members")
    order = members[_ranking(stats["variance"][members])]
    return np.sort(order[:k])
