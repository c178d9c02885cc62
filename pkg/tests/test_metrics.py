"""Metrics against brute-force implementations, plus hand-checked cases."""
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modabric.metrics import (
    accuracy,
    confusion,
    mean_ranking_metrics,
    per_class_f1,
    precision_recall_at_k,
    weighted_f1,
)

N_RANDOM = 1000
EXACT = 1e-12


def brute_accuracy(true, pred):
    return sum(1 for t, p in zip(true, pred) if t == p) / len(true)


def brute_weighted_f1(true, pred, n_classes):
    support = Counter(true)
    total = 0.0
    for c in range(n_classes):
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(true, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(true, pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        total += f1 * support.get(c, 0)
    return total / len(true)


def brute_confusion(true, pred, n_classes):
    m = [[0] * n_classes for _ in range(n_classes)]
    for t, p in zip(true, pred):
        m[t][p] += 1
    return np.array(m)


def brute_prec_recall(ranked, relevant, k):
    top = ranked[:k]
    hits = 0
    for item in top:
        if item in relevant:
            hits += 1
    return hits / k, hits / len(relevant)


def _random_labels(rng):
    c = int(rng.integers(2, 6))
    n = int(rng.integers(1, 30))
    return rng.integers(0, c, size=n), rng.integers(0, c, size=n), c


def test_accuracy_matches_oracle():
    rng = np.random.default_rng(10)
    for _ in range(N_RANDOM):
        t, p, _ = _random_labels(rng)
        assert abs(accuracy(t, p) - brute_accuracy(t.tolist(), p.tolist())) <= EXACT


def test_weighted_f1_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(N_RANDOM):
        t, p, c = _random_labels(rng)
        vocab = [f"l{i}" for i in range(c)]
        assert abs(weighted_f1(t, p, vocab) - brute_weighted_f1(t.tolist(), p.tolist(), c)) <= EXACT


def test_confusion_matches_oracle():
    rng = np.random.default_rng(12)
    for _ in range(N_RANDOM):
        t, p, c = _random_labels(rng)
        cm = confusion(t, p, list(range(c)))
        assert np.array_equal(cm.counts, brute_confusion(t.tolist(), p.tolist(), c))
        norm = confusion(t, p, list(range(c)), normalise=True).counts
        raw = brute_confusion(t.tolist(), p.tolist(), c)
        for r in range(c):
            expect = raw[r] / raw[r].sum() if raw[r].sum() else np.zeros(c)
            assert np.max(np.abs(norm[r] - expect)) <= EXACT


def test_precision_recall_at_k_matches_oracle():
    rng = np.random.default_rng(13)
    for _ in range(N_RANDOM):
        n_items = int(rng.integers(1, 40))
        ranked = rng.permutation(n_items)[:int(rng.integers(0, n_items + 1))].tolist()
        relevant = set(rng.choice(n_items, size=int(rng.integers(1, n_items + 1)), replace=False).tolist())
        k = int(rng.integers(1, 15))
        got = precision_recall_at_k(ranked, relevant, k)
        p, r = brute_prec_recall(ranked, relevant, k)
        assert abs(got.precision_at_k - p) <= EXACT and abs(got.recall_at_k - r) <= EXACT


def test_perfect_and_constant_predictors():
    t = np.array([0, 1, 2, 2, 1])
    assert weighted_f1(t, t, ["a", "b", "c"]) == 1.0
    assert accuracy(t, t) == 1.0
    majority = np.full_like(t, 2)
    assert accuracy(t, majority) == pytest.approx(2 / 5)


def test_weighted_f1_hand_example():
    # class 0: tp=1 fp=1 fn=1 -> f1 0.5 ; class 1: tp=1 fp=1 fn=1 -> 0.5 ; class 2: tp=1 -> 1
    t = np.array([0, 0, 1, 1, 2])
    p = np.array([0, 1, 1, 0, 2])
    assert weighted_f1(t, p, [0, 1, 2]) == pytest.approx((0.5 * 2 + 0.5 * 2 + 1.0) / 5)
    f1, support = per_class_f1(t, p, 3)
    assert support.tolist() == [2, 2, 1]


def test_class_never_predicted_nor_present_is_zero_weight():
    t = np.array([0, 0])
    p = np.array([0, 1])
    f1, support = per_class_f1(t, p, 3)
    assert f1[2] == 0.0 and support[2] == 0


def test_confusion_zero_row_stays_zero_when_normalised():
    cm = confusion([0, 0], [0, 1], ["a", "b", "c"], normalise=True)
    assert cm.counts[2].tolist() == [0.0, 0.0, 0.0]


def test_precision_recall_examples():
    m = precision_recall_at_k(list(range(10)), {0, 5, 20}, 10)
    assert m.precision_at_k == pytest.approx(0.2) and m.recall_at_k == pytest.approx(2 / 3)
    assert precision_recall_at_k([1, 2], set(), 10) is None
    with pytest.raises(ValueError):
        precision_recall_at_k([1, 1], {1}, 10)
    with pytest.raises(ValueError):
        precision_recall_at_k([1], {1}, 0)


def test_mean_skips_undefined_customers():
    results = [precision_recall_at_k([1], {1}, 1), None, precision_recall_at_k([2], {3}, 1)]
    p, r, n = mean_ranking_metrics(results)
    assert (p, r, n) == (0.5, 0.5, 2)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        accuracy([], [])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_weighted_f1_bounded_and_confusion_total(pairs):
    t = np.array([a for a, _ in pairs])
    p = np.array([b for _, b in pairs])
    f = weighted_f1(t, p, range(4))
    assert 0.0 <= f <= 1.0
    assert confusion(t, p, range(4)).total == len(pairs)
    assert np.trace(confusion(t, p, range(4)).counts) == int((t == p).sum())
