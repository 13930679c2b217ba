"""Ranking and threshold metrics for binary miscitation scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


def _check_labels(labels: np.ndarray):
    if labels.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("metrics need at least one positive and one negative label")


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(x)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e + 1)
    return ranks


def auc(scores, labels) -> float:
    """ROC AUC via the rank-sum (Mann-Whitney) statistic; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    _check_labels(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    r = average_ranks(scores)
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1_precision(scores, labels, threshold: float = 0.5) -> tuple[float, float, float]:
    """(f1, precision, recall) predicting positive when ``score >= threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_labels(labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1, precision, recall


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    f1: float
    precision: float
    recall: float
    threshold: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    labels = np.asarray(labels)
    f1, p, r = f1_precision(scores, labels, threshold)
    return MetricsReport(auc(scores, labels), f1, p, r, threshold, int(labels.size))
