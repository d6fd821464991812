"""Confusion metrics against per-sample tally oracles; CI aggregation
against long-hand t-interval arithmetic."""

import numpy as np
import pytest

from earnet.errors import DataError
from earnet.metrics import aggregate_folds, confusion, metrics_from_confusion

T_CRIT_DF4 = 2.7764451051977987  # two-sided 95%, 4 degrees of freedom


def tally_oracle(preds, targets, k):
    """Per-sample counting loops; no vectorization, no shared code."""
    tp = [0] * k
    fp = [0] * k
    fn = [0] * k
    tn = [0] * k
    for p, t in zip(preds, targets):
        for c in range(k):
            if t == c and p == c:
                tp[c] += 1
            elif t != c and p == c:
                fp[c] += 1
            elif t == c and p != c:
                fn[c] += 1
            else:
                tn[c] += 1
    acc = sum(tp) / len(preds)

    def div(a, b):
        return a / b if b > 0 else 0.0

    precision = [div(tp[c], tp[c] + fp[c]) for c in range(k)]
    recall = [div(tp[c], tp[c] + fn[c]) for c in range(k)]
    spec = [div(tn[c], tn[c] + fp[c]) for c in range(k)]
    f1 = [div(2 * precision[c] * recall[c], precision[c] + recall[c]) for c in range(k)]
    return acc, precision, recall, spec, f1


class TestConfusion:
    def test_perfect_predictions_diagonal(self):
        y = np.array([0, 1, 2, 2, 1, 0])
        cm = confusion(y, y, 3)
        np.testing.assert_array_equal(cm, np.diag([2, 2, 2]))

    def test_single_predicted_class_single_column(self):
        t = np.array([0, 1, 2, 1])
        cm = confusion(np.zeros(4, dtype=int), t, 3)
        assert cm[:, 0].sum() == 4
        assert cm[:, 1:].sum() == 0

    def test_random_case_matches_tally(self):
        rng = np.random.default_rng(0)
        t = rng.integers(0, 9, size=500)
        p = rng.integers(0, 9, size=500)
        cm = confusion(p, t, 9)
        for c_true in range(9):
            for c_pred in range(9):
                want = int(np.sum((t == c_true) & (p == c_pred)))
                assert cm[c_true, c_pred] == want
        assert cm.sum() == 500

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError):
            confusion([0, 3], [0, 1], 3)
        with pytest.raises(DataError):
            confusion([0, 1], [-1, 1], 3)


class TestMetricsFromConfusion:
    def test_symmetric_binary_counts(self):
        ms = metrics_from_confusion(np.array([[1, 1], [1, 1]]))
        assert ms.accuracy == 0.5
        np.testing.assert_allclose(ms.precision, 0.5)
        np.testing.assert_allclose(ms.recall, 0.5)
        np.testing.assert_allclose(ms.specificity, 0.5)
        np.testing.assert_allclose(ms.f1, 0.5)
        assert ms.degenerate == []

    def test_perfect_nine_class(self):
        ms = metrics_from_confusion(np.diag([5] * 9))
        assert ms.accuracy == 1.0
        for arr in (ms.precision, ms.recall, ms.specificity, ms.f1):
            np.testing.assert_array_equal(arr, 1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_matches_tally_oracle_exactly(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 200))
        t = rng.integers(0, 9, size=n)
        p = rng.integers(0, 9, size=n)
        ms = metrics_from_confusion(confusion(p, t, 9))
        acc, precision, recall, spec, f1 = tally_oracle(p.tolist(), t.tolist(), 9)
        assert ms.accuracy == acc
        np.testing.assert_array_equal(ms.precision, precision)
        np.testing.assert_array_equal(ms.recall, recall)
        np.testing.assert_array_equal(ms.specificity, spec)
        np.testing.assert_array_equal(ms.f1, f1)

    def test_degenerate_flags(self):
        # class 2 never appears and is never predicted: recall, precision, f1 degenerate
        cm = confusion([0, 1, 0, 1], [0, 1, 1, 0], 3)
        ms = metrics_from_confusion(cm)
        assert ("precision", 2) in ms.degenerate
        assert ("recall", 2) in ms.degenerate
        assert ("f1", 2) in ms.degenerate
        assert ms.precision[2] == 0.0 and ms.recall[2] == 0.0 and ms.f1[2] == 0.0

    def test_f1_is_harmonic_mean_when_defined(self):
        rng = np.random.default_rng(7)
        t = rng.integers(0, 4, size=400)
        p = np.where(rng.random(400) < 0.7, t, rng.integers(0, 4, size=400))
        ms = metrics_from_confusion(confusion(p, t, 4))
        for c in range(4):
            if ms.precision[c] + ms.recall[c] > 0:
                want = 2 * ms.precision[c] * ms.recall[c] / (ms.precision[c] + ms.recall[c])
                assert ms.f1[c] == pytest.approx(want, rel=1e-12)

    def test_values_within_unit_interval(self):
        rng = np.random.default_rng(8)
        t = rng.integers(0, 9, size=300)
        p = rng.integers(0, 9, size=300)
        ms = metrics_from_confusion(confusion(p, t, 9))
        for arr in (ms.precision, ms.recall, ms.specificity, ms.f1):
            assert np.all(arr >= 0) and np.all(arr <= 1)
        assert 0 <= ms.accuracy <= 1

    def test_bad_matrices(self):
        with pytest.raises(DataError):
            metrics_from_confusion(np.zeros((2, 3), dtype=int))
        with pytest.raises(DataError):
            metrics_from_confusion(np.zeros((3, 3), dtype=int))  # empty
        with pytest.raises(DataError):
            metrics_from_confusion(np.array([[1, -1], [0, 1]]))


class TestAggregateFolds:
    def test_constant_folds(self):
        agg = aggregate_folds([1.0] * 5)
        assert agg.mean == 1.0
        assert agg.std == 0.0
        assert agg.ci_length == 0.0

    def test_two_point(self):
        agg = aggregate_folds([0.0, 1.0])
        assert agg.mean == 0.5
        assert agg.std == pytest.approx(np.sqrt(0.5), rel=1e-12)

    def test_matches_longhand_t_interval(self):
        rng = np.random.default_rng(9)
        v = rng.uniform(0.8, 1.0, size=5)
        agg = aggregate_folds(v)
        mean = v.sum() / 5
        std = np.sqrt(((v - mean) ** 2).sum() / 4)
        half = T_CRIT_DF4 * std / np.sqrt(5)
        assert abs(agg.mean - mean) < 1e-12
        assert abs(agg.std - std) < 1e-12
        assert abs(agg.ci_low - (mean - half)) < 1e-9
        assert abs(agg.ci_high - (mean + half)) < 1e-9
        assert abs(agg.ci_length - 2 * half) < 1e-9

    def test_too_few_values(self):
        with pytest.raises(DataError):
            aggregate_folds([1.0])
