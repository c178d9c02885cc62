"""Classification and ranking metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def _pair(true, pred):
    t = np.asarray(true)
    p = np.asarray(pred)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"label arrays must be 1-D and equal length, got {t.shape} and {p.shape}")
    if t.size == 0:
        raise ValueError("metrics over an empty sample")
    return t, p


def accuracy(true, pred) -> float:
    t, p = _pair(true, pred)
    return float(np.mean(t == p))


def per_class_f1(true, pred, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class F1 and support; F1 is 0 where precision + recall is 0."""
    t, p = _pair(true, pred)
    tp = np.bincount(t[t == p], minlength=n_classes).astype(np.float64)
    support = np.bincount(t, minlength=n_classes).astype(np.float64)
    predicted = np.bincount(p, minlength=n_classes).astype(np.float64)
    # F1 = 2tp / (support + predicted), which is 0 exactly when tp is 0
    denom = support + predicted
    f1 = np.divide(2.0 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    return f1, support


def weighted_f1(true, pred, label_vocab: Sequence) -> float:
    """Per-class F1 averaged with weights equal to each class's true count."""
    t, _ = _pair(true, pred)
    f1, support = per_class_f1(true, pred, len(label_vocab))
    return float((f1 * support).sum() / t.size)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    label_vocab: list
    normalised: bool = False

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def confusion(true, pred, vocab: Sequence, normalise: bool = False) -> ConfusionMatrix:
    """Rows are true labels, columns predicted labels."""
    t, p = _pair(true, pred)
    c = len(vocab)
    if t.min() < 0 or p.min() < 0 or t.max() >= c or p.max() >= c:
        raise ValueError(f"label outside vocabulary of size {c}")
    counts = np.bincount(t * c + p, minlength=c * c).reshape(c, c)
    if normalise:
        rows = counts.sum(axis=1, keepdims=True).astype(np.float64)
        counts = np.divide(counts, rows, out=np.zeros((c, c)), where=rows > 0)
    return ConfusionMatrix(counts, list(vocab), normalise)


@dataclass(frozen=True)
class RankingMetrics:
    precision_at_k: float
    recall_at_k: float
    k: int
    hits: int


def precision_recall_at_k(ranked, relevant, k: int = 10) -> RankingMetrics | None:
    """Precision and recall of the top ``k`` of ``ranked``.

    Returns None when ``relevant`` is empty: recall is undefined and such
    customers are left out of averages.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = list(ranked)
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicates")
    relevant = set(relevant)
    if not relevant:
        return None
    hits = len(relevant.intersection(ranked[:k]))
    return RankingMetrics(hits / k, hits / len(relevant), k, hits)


def mean_ranking_metrics(results) -> tuple[float, float, int]:
    """Mean precision and recall over non-None results, plus the customer count."""
    kept = [r for r in results if r is not None]
    if not kept:
        return 0.0, 0.0, 0
    return (float(np.mean([r.precision_at_k for r in kept])),
            float(np.mean([r.recall_at_k for r in kept])), len(kept))
