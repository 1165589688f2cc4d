import math

import numpy as np
import pytest

from purewave.errors import DatasetError
from purewave.metrics import (
    ConfusionMatrix,
    asr_performance,
    auroc,
    cer,
    confidence_interval,
    confusion_matrix,
    levenshtein,
    roc_curve,
    wer,
)

ALPHABET = "abcd "


def _edit_distance_reference(a, b):
    # straightforward full-matrix DP, kept independent of the two-row version
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
    return d[n][m]


def test_levenshtein_matches_reference_dp():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = "".join(rng.choice(list(ALPHABET), size=rng.integers(0, 12)))
        b = "".join(rng.choice(list(ALPHABET), size=rng.integers(0, 12)))
        assert levenshtein(a, b) == _edit_distance_reference(a, b)


def test_levenshtein_axioms():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = "".join(rng.choice(list(ALPHABET), size=rng.integers(0, 10)))
        b = "".join(rng.choice(list(ALPHABET), size=rng.integers(0, 10)))
        d = levenshtein(a, b)
        assert d == levenshtein(b, a)
        assert (d == 0) == (a == b)
        assert d >= abs(len(a) - len(b))
        assert d <= max(len(a), len(b))


def test_cer_conventions():
    assert cer("abc", "abc") == 0.0
    assert cer("", "") == 0.0
    assert cer("anything", "") == 1.0  # fixed penalty for an empty reference
    assert cer("", "abcd") == 1.0
    assert cer("axc", "abc") == pytest.approx(1 / 3)
    # cer can exceed 1 when the hypothesis is much longer than the reference
    assert cer("aaaaaa", "a") == 5.0


def test_wer_conventions():
    assert wer("a b c", "a b c") == 0.0
    assert wer("a x c", "a b c") == pytest.approx(1 / 3)
    assert wer("", "") == 0.0
    assert wer("something", "") == 1.0


def test_asr_performance_clamps_at_zero():
    pairs = [("abc", "abc"), ("aaaaaa", "a")]
    # second pair has cer 5.0 -> clamped contribution 0, not negative
    assert asr_performance(pairs) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        asr_performance([])


def test_confusion_matrix_counts_and_rates():
    predicted = [True, True, False, False, True]
    actual = [True, False, True, False, True]
    cm = confusion_matrix(predicted, actual)
    assert (cm.tn, cm.fn, cm.fp, cm.tp) == (1, 1, 1, 2)
    assert cm.total == 5
    assert cm.accuracy == pytest.approx(3 / 5)
    assert cm.tpr == pytest.approx(2 / 3)
    assert cm.fpr == pytest.approx(1 / 2)
    assert cm.as_dict() == {"tn": 1, "fn": 1, "fp": 1, "tp": 2}


def test_confusion_matrix_validation():
    with pytest.raises(ValueError):
        confusion_matrix([True], [True, False])
    with pytest.raises(ValueError):
        ConfusionMatrix(-1, 0, 0, 0)


def _auroc_rank_statistic(scores, labels):
    # Mann-Whitney U statistic normalized by n_pos * n_neg, ties counted half
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def test_auroc_equals_rank_statistic():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(4, 30))
        labels = rng.random(n) < 0.5
        if labels.all() or not labels.any():
            labels[0] = True
            labels[1] = False
        # quantized scores force plenty of ties
        scores = np.round(rng.random(n), 1)
        assert auroc(scores, labels) == pytest.approx(
            _auroc_rank_statistic(scores, labels), abs=1e-9
        )


def test_auroc_extremes():
    assert auroc([0.9, 0.8, 0.2, 0.1], [True, True, False, False]) == 1.0
    assert auroc([0.1, 0.2, 0.8, 0.9], [True, True, False, False]) == 0.0
    assert auroc([0.5, 0.5, 0.5, 0.5], [True, True, False, False]) == 0.5


def test_roc_curve_monotone_and_anchored():
    rng = np.random.default_rng(3)
    scores = np.round(rng.random(50), 1)
    labels = rng.random(50) < 0.4
    labels[0], labels[1] = True, False
    curve = roc_curve(scores, labels)
    fpr = np.array([p[0] for p in curve.points])
    tpr = np.array([p[1] for p in curve.points])
    assert fpr[0] == 0.0 and tpr[0] == 0.0
    assert fpr[-1] == 1.0 and tpr[-1] == 1.0
    assert np.all(np.diff(fpr) >= 0)
    assert np.all(np.diff(tpr) >= 0)


def test_roc_curve_single_class_rejected():
    with pytest.raises(DatasetError):
        roc_curve([0.1, 0.2], [True, True])


def test_confidence_interval_z_values():
    values = [1.0, 2.0, 3.0, 4.0]
    mean = 2.5
    se = np.std(values, ddof=1) / 2.0
    for level, z in ((0.90, 1.645), (0.95, 1.96), (0.99, 2.576)):
        m, lo, hi = confidence_interval(values, level)
        assert m == pytest.approx(mean)
        assert lo == pytest.approx(mean - z * se)
        assert hi == pytest.approx(mean + z * se)


def test_confidence_interval_degenerate():
    m, lo, hi = confidence_interval([3.0])
    assert m == 3.0
    assert math.isnan(lo) and math.isnan(hi)
    with pytest.raises(ValueError):
        confidence_interval([])
    with pytest.raises(ValueError):
        confidence_interval([1.0, 2.0], level=0.5)
