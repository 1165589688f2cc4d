"""Edit-distance metrics, binary-classification scores, and confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DatasetError

# Conventions, fixed here because references can legitimately be empty:
#   cer("", "")          -> 0.0
#   cer(nonempty, "")    -> 1.0
#   1 - cer is clamped at 0 when aggregated (cer can exceed 1).
EMPTY_REFERENCE_CER = 1.0

_Z_VALUES = {0.90: 1.645, 0.95: 1.96, 0.99: 2.576}


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Minimum number of unit-cost insertions, deletions, and substitutions."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[len(b)]


def cer(hypothesis: str, reference: str) -> float:
    """Character error rate: edit distance over characters / reference length."""
    if len(reference) == 0:
        return 0.0 if len(hypothesis) == 0 else EMPTY_REFERENCE_CER
    return levenshtein(hypothesis, reference) / len(reference)


def wer(hypothesis: str, reference: str) -> float:
    """Word error rate: edit distance over space-separated tokens."""
    hyp = hypothesis.split(" ") if hypothesis else []
    ref = reference.split(" ") if reference else []
    if len(ref) == 0:
        return 0.0 if len(hyp) == 0 else EMPTY_REFERENCE_CER
    return levenshtein(hyp, ref) / len(ref)


def asr_performance(pairs: Sequence[tuple[str, str]]) -> float:
    """Mean of max(0, 1 - cer) over (hypothesis, reference) pairs."""
    if len(pairs) == 0:
        raise ValueError("asr_performance requires at least one pair")
    return float(np.mean([max(0.0, 1.0 - cer(h, r)) for h, r in pairs]))


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary counts; positive means classified adversarial."""

    tn: int
    fn: int
    fp: int
    tp: int

    def __post_init__(self):
        if min(self.tn, self.fn, self.fp, self.tp) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fn + self.fp + self.tp

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else float("nan")

    @property
    def tpr(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def fpr(self) -> float:
        neg = self.fp + self.tn
        return self.fp / neg if neg else float("nan")

    def as_dict(self) -> dict:
        return {"tn": self.tn, "fn": self.fn, "fp": self.fp, "tp": self.tp}


def confusion_matrix(predicted: Sequence[bool], actual: Sequence[bool]) -> ConfusionMatrix:
    """Counts from parallel predicted/actual adversarial flags."""
    if len(predicted) != len(actual):
        raise ValueError("predicted and actual must have equal length")
    tn = fn = fp = tp = 0
    for p, a in zip(predicted, actual):
        if a:
            tp, fn = (tp + 1, fn) if p else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if p else (fp, tn + 1)
    return ConfusionMatrix(tn=tn, fn=fn, fp=fp, tp=tp)


@dataclass(frozen=True)
class RocCurve:
    """Threshold-sweep operating points as (fpr, tpr), fpr non-decreasing."""

    points: tuple

    def __post_init__(self):
        fprs = [p[0] for p in self.points]
        if any(b < a for a, b in zip(fprs, fprs[1:])):
            raise ValueError("ROC points must have non-decreasing FPR")


def roc_curve(scores: Sequence[float], labels: Sequence[bool]) -> RocCurve:
    """ROC from sweeping the decision threshold over distinct score values.

    Higher score means more adversarial. Equal scores move together, which is
    what makes the trapezoidal area agree with the rank-statistic form of the
    AUROC under ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    n_pos = int(np.count_nonzero(labels))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DatasetError("ROC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < sorted_scores.size:
        j = i
        while j < sorted_scores.size and sorted_scores[j] == sorted_scores[i]:
            j += 1
        tp += int(np.count_nonzero(sorted_labels[i:j]))
        fp += (j - i) - int(np.count_nonzero(sorted_labels[i:j]))
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return RocCurve(points=tuple(points))


def auroc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Trapezoidal area under the ROC curve."""
    curve = roc_curve(scores, labels)
    area = 0.0
    for (f0, t0), (f1, t1) in zip(curve.points, curve.points[1:]):
        area += (f1 - f0) * (t1 + t0) / 2.0
    return float(area)


def confidence_interval(values: Sequence[float], level: float = 0.95) -> tuple[float, float, float]:
    """(mean, low, high) normal-approximation interval: mean +- z * s / sqrt(n).

    Uses the sample standard deviation (n-1 denominator). With a single value
    the interval is not applicable and both bounds are NaN.
    """
    if level not in _Z_VALUES:
        raise ValueError(f"unsupported confidence level {level}; choose from {sorted(_Z_VALUES)}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("confidence_interval requires a non-empty 1-D sequence")
    mean = float(np.mean(arr))
    if arr.size == 1:
        return mean, float("nan"), float("nan")
    half = _Z_VALUES[level] * float(np.std(arr, ddof=1)) / np.sqrt(arr.size)
    return mean, mean - half, mean + half
