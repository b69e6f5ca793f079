"""Binary classification metrics, written to match brute-force oracles."""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    """Inputs on which the metric is undefined."""


def _check_lengths(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def f1_score(predictions, labels) -> float:
    """2TP / (2TP + FP + FN) with positive class 1; 0 when the denominator is 0."""
    predictions, labels = _check_lengths(predictions, labels)
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values sharing the mean of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with midranks for ties.

    (sum of positive ranks - P(P+1)/2) / (P*N); equals the probability a
    random positive outscores a random negative, ties counting half.
    """
    scores, labels = _check_lengths(np.asarray(scores, dtype=np.float64),
                                    np.asarray(labels))
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both classes present in the evaluation set")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
