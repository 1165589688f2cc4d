"""Adversarial-input detector based on purification divergence.

The statistic is the character error rate between the defended transcript
(purify at depth n_star, then recognize) and the undefended transcript of the
same audio, the latter acting as the reference. Clean audio barely moves
under purification; attacked audio moves a lot. An input is flagged
adversarial when the divergence strictly exceeds a threshold omega. Fitting
grid-searches (n_star, omega) for best calibration accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform
from .defense import DefendedSystem, ss
from .errors import DatasetError
from .metrics import auroc, cer, confusion_matrix


@dataclass(frozen=True)
class LabeledExample:
    waveform: Waveform
    is_adversarial: bool
    bucket: str
    id: str


@dataclass
class DetectionOutcome:
    verdict: str  # "adversarial" or "benign"
    divergence: float
    purified_transcript: str
    plain_transcript: str

    @property
    def is_adversarial(self) -> bool:
        return self.verdict == "adversarial"


@dataclass
class DetectionModel:
    n_star: int
    omega: float
    fit_accuracy: float = float("nan")
    fitted_on: dict = field(default_factory=dict)
    calibration: list = field(default_factory=list)  # records at the chosen n_star
    candidate_scores: list = field(default_factory=list)  # best omega/accuracy per n

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be non-negative")

    def to_dict(self) -> dict:
        return {
            "n_star": self.n_star,
            "omega": self.omega,
            "fit_accuracy": self.fit_accuracy,
            "fitted_on": self.fitted_on,
            "calibration": self.calibration,
            "candidate_scores": self.candidate_scores,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionModel":
        return cls(
            n_star=int(d["n_star"]),
            omega=float(d["omega"]),
            fit_accuracy=float(d.get("fit_accuracy", float("nan"))),
            fitted_on=dict(d.get("fitted_on", {})),
            calibration=list(d.get("calibration", [])),
            candidate_scores=list(d.get("candidate_scores", [])),
        )


def divergence(x, n_star: int, sys: DefendedSystem, rng: np.random.Generator) -> float:
    """CER of the purified transcript scored against the unpurified one."""
    defended = ss(x, n_star, sys, rng)
    undefended = sys.model.recognize(sys.samples_of(x), allow_untrained=True)
    return cer(defended, undefended)


def detect(x, dm: DetectionModel, sys: DefendedSystem, rng: np.random.Generator) -> DetectionOutcome:
    purified = ss(x, dm.n_star, sys, rng)
    plain = sys.model.recognize(sys.samples_of(x), allow_untrained=True)
    d = cer(purified, plain)
    return DetectionOutcome(
        verdict="adversarial" if d > dm.omega else "benign",
        divergence=d,
        purified_transcript=purified,
        plain_transcript=plain,
    )


def default_omega_grid(step: float = 0.01) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.round(np.linspace(0.0, 1.0, n + 1), 6)


def fit(
    calibration,
    n_candidates,
    omega_grid,
    sys: DefendedSystem,
    rng: np.random.Generator | None = None,
) -> DetectionModel:
    """Pick (n_star, omega) maximising accuracy on labelled calibration audio.

    One purification draw per example per candidate depth; ties prefer the
    smaller depth, then the smaller threshold.
    """
    examples = list(calibration)
    if not examples:
        raise DatasetError("cannot fit a detector without calibration examples")
    labels = np.array([ex.is_adversarial for ex in examples], dtype=bool)
    if labels.all() or not labels.any():
        raise DatasetError("calibration examples must include both classes")
    if rng is None:
        rng = np.random.default_rng(0)
    omega_grid = np.sort(np.asarray(omega_grid, dtype=np.float64))

    best = None  # (accuracy, n, omega, divergences); strict > keeps first maximizer
    candidate_scores = []
    for n in sorted(int(n) for n in n_candidates):
        divs = np.array([divergence(ex.waveform, n, sys, rng) for ex in examples])
        best_for_n = None
        for omega in omega_grid:
            acc = float(np.mean((divs > omega) == labels))
            if best_for_n is None or acc > best_for_n[0]:
                best_for_n = (acc, float(omega))
            if best is None or acc > best[0]:
                best = (acc, int(n), float(omega), divs)
        candidate_scores.append({"n_star": int(n), "omega": best_for_n[1], "accuracy": best_for_n[0]})

    acc, n_star, omega, divs = best
    records = [
        {
            "id": ex.id,
            "bucket": ex.bucket,
            "is_adversarial": bool(ex.is_adversarial),
            "divergence": float(d),
        }
        for ex, d in zip(examples, divs)
    ]
    n_adv = int(labels.sum())
    return DetectionModel(
        n_star=n_star,
        omega=omega,
        fit_accuracy=acc,
        fitted_on={
            "n_examples": len(examples),
            "n_adversarial": n_adv,
            "n_clean": len(examples) - n_adv,
            "n_candidates": [int(n) for n in n_candidates],
            "omega_grid_size": int(omega_grid.size),
        },
        calibration=records,
        candidate_scores=candidate_scores,
    )


def split_dataset(items, fit_fraction: float, rng: np.random.Generator | None = None):
    """Class- and bucket-stratified split into (calibration, test) lists.

    Each bucket must hold equally many clean and adversarial examples; the
    calibration side takes round(fit_fraction * n) of each class per bucket,
    and both sides must end up non-empty.
    """
    examples = list(items)
    if not 0.0 < fit_fraction < 1.0:
        raise ValueError("fit_fraction must lie strictly between 0 and 1")
    if rng is None:
        rng = np.random.default_rng(0)
    buckets = sorted({ex.bucket for ex in examples})
    calibration, test = [], []
    for bucket in buckets:
        clean = sorted(
            (ex for ex in examples if ex.bucket == bucket and not ex.is_adversarial),
            key=lambda e: e.id,
        )
        adv = sorted(
            (ex for ex in examples if ex.bucket == bucket and ex.is_adversarial),
            key=lambda e: e.id,
        )
        if len(clean) != len(adv):
            raise DatasetError(
                f"bucket {bucket!r} has {len(clean)} clean vs {len(adv)} adversarial examples"
            )
        n = len(clean)
        k = int(round(fit_fraction * n))
        if not 1 <= k < n:
            raise DatasetError(
                f"bucket {bucket!r}: fit_fraction {fit_fraction} keeps {k} of {n} per class"
            )
        for group in (clean, adv):
            order = rng.permutation(n)
            calibration.extend(group[j] for j in order[:k])
            test.extend(group[j] for j in order[k:])
    return calibration, test


@dataclass
class DetectionEvaluation:
    accuracy: float
    tpr: float
    fpr: float
    auroc: float
    confusion: dict
    records: list  # per-example {id, bucket, is_adversarial, divergence, flagged}

    def accuracy_at(self, omega: float) -> float:
        """Accuracy the stored divergences would give at a different threshold."""
        hits = [(r["divergence"] > omega) == r["is_adversarial"] for r in self.records]
        return float(np.mean(hits))


def evaluate_detector(
    dm: DetectionModel, examples, sys: DefendedSystem, rng: np.random.Generator | None = None
) -> DetectionEvaluation:
    examples = list(examples)
    if not examples:
        raise DatasetError("cannot evaluate a detector without examples")
    if rng is None:
        rng = np.random.default_rng(0)
    records = []
    for ex in examples:
        d = divergence(ex.waveform, dm.n_star, sys, rng)
        records.append(
            {
                "id": ex.id,
                "bucket": ex.bucket,
                "is_adversarial": bool(ex.is_adversarial),
                "divergence": float(d),
                "flagged": bool(d > dm.omega),
            }
        )
    flagged = [r["flagged"] for r in records]
    actual = [r["is_adversarial"] for r in records]
    cm = confusion_matrix(flagged, actual)
    scores = [r["divergence"] for r in records]
    return DetectionEvaluation(
        accuracy=cm.accuracy,
        tpr=cm.tpr,
        fpr=cm.fpr,
        auroc=auroc(scores, actual),
        confusion=cm.as_dict(),
        records=records,
    )
