"""Sensitivity, specificity, AUC and ROC curves.

A slide is called positive when its score is >= the threshold. AUC is the
Mann-Whitney statistic with ties counted as one half.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, NoNegatives, NoPositives

__all__ = [
    "RocPoint",
    "sensitivity",
    "specificity",
    "auc",
    "roc_curve",
    "roc_area",
    "write_roc_csv",
]


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


def _split(scores, labels):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    return s, y


def sensitivity(scores, labels, tau: float) -> float:
    s, y = _split(scores, labels)
    pos = s[y == 1]
    if pos.size == 0:
        raise NoPositives("sensitivity is undefined without positive slides")
    return float(np.count_nonzero(pos >= tau) / pos.size)


def specificity(scores, labels, tau: float) -> float:
    s, y = _split(scores, labels)
    neg = s[y == 0]
    if neg.size == 0:
        raise NoNegatives("specificity is undefined without negative slides")
    return float(np.count_nonzero(neg < tau) / neg.size)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks, O(n log n)."""
    s, y = _split(scores, labels)
    pos = y == 1
    n_pos = int(np.count_nonzero(pos))
    n_neg = int(np.count_nonzero(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> list[RocPoint]:
    """ROC points at -inf, every distinct score (ascending) and +inf."""
    s, y = _split(scores, labels)
    pos = s[y == 1]
    neg = s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise DegenerateLabels("ROC curve needs both classes")
    thresholds = np.unique(s)
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    # counts of scores >= t
    tp = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    points = [RocPoint(-np.inf, 1.0, 1.0)]
    points += [
        RocPoint(float(t), tp_i / pos.size, fp_i / neg.size)
        for t, tp_i, fp_i in zip(thresholds, tp, fp)
    ]
    points.append(RocPoint(np.inf, 0.0, 0.0))
    return points


def roc_area(points: list[RocPoint]) -> float:
    """Trapezoidal area under ROC points ordered by threshold."""
    fpr = np.array([p.fpr for p in points])[::-1]
    tpr = np.array([p.tpr for p in points])[::-1]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def write_roc_csv(points: list[RocPoint], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "fpr", "tpr"])
        for p in points:
            w.writerow([repr(p.threshold), repr(p.fpr), repr(p.tpr)])
