"""Per-frame MLP recognizer trained with CTC, differentiable down to samples.

Architecture, per feature frame: scale by 0.25, one tanh hidden layer, linear
output over the character classes plus blank. tanh keeps the network smooth
everywhere, which matters because attack and gradient-check code relies on
finite differences agreeing with the analytic gradient.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .ctc import CtcLossResult, ctc_loss, decode_greedy, min_frames_required
from .errors import CheckpointError, TrainingDivergedError, TrainingGateError, UnrealizableTargetError
from .features import (
    DEFAULT_FEATURES,
    FeatureCache,
    FeatureConfig,
    features_backward,
    features_forward,
    frame_count,
)
from .metrics import cer
from .optim import Adam
from .vocab import CharVocab, DEFAULT_VOCAB

FEAT_SCALE = 0.25
CHECKPOINT_FORMAT = "ctc-recognizer-v1"


@dataclass
class ForwardCache:
    feat_cache: FeatureCache
    scaled: np.ndarray  # (frames, bins), features after scaling
    hidden: np.ndarray  # (frames, hidden), tanh activations
    logits: np.ndarray  # (frames, classes)


class CtcRecognizer:
    def __init__(
        self,
        w1: np.ndarray,
        b1: np.ndarray,
        w2: np.ndarray,
        b2: np.ndarray,
        feature_cfg: FeatureConfig = DEFAULT_FEATURES,
        vocab: CharVocab = DEFAULT_VOCAB,
        trained: bool = False,
    ):
        if w1.shape[0] != feature_cfg.n_bins or w2.shape[1] != vocab.num_classes:
            raise ValueError("weight shapes do not match feature bins / vocabulary size")
        if w1.shape[1] != w2.shape[0] or b1.shape != (w1.shape[1],) or b2.shape != (w2.shape[1],):
            raise ValueError("inconsistent layer shapes")
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.feature_cfg = feature_cfg
        self.vocab = vocab
        self.trained = trained
        self.train_report = None

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        hidden: int = 96,
        feature_cfg: FeatureConfig = DEFAULT_FEATURES,
        vocab: CharVocab = DEFAULT_VOCAB,
    ) -> "CtcRecognizer":
        n_in = feature_cfg.n_bins
        w1 = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, hidden))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, vocab.num_classes))
        return cls(w1, np.zeros(hidden), w2, np.zeros(vocab.num_classes), feature_cfg, vocab)

    @property
    def hidden_size(self) -> int:
        return self.w1.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, samples: np.ndarray) -> ForwardCache:
        feat_cache = features_forward(samples, self.feature_cfg)
        scaled = feat_cache.feats * FEAT_SCALE
        hidden = np.tanh(scaled @ self.w1 + self.b1)
        logits = hidden @ self.w2 + self.b2
        return ForwardCache(feat_cache=feat_cache, scaled=scaled, hidden=hidden, logits=logits)

    def logits(self, samples: np.ndarray) -> np.ndarray:
        return self.forward(samples).logits

    def recognize(self, w, allow_untrained: bool = False) -> str:
        """Greedy transcript for a waveform (or raw sample array)."""
        if not self.trained and not allow_untrained:
            raise TrainingGateError("recognizer has not been trained; pass allow_untrained=True to override")
        samples = getattr(w, "samples", w)
        return decode_greedy(self.logits(samples), self.vocab)

    def backprop_logits_to_samples(self, cache: ForwardCache, dlogits: np.ndarray) -> np.ndarray:
        """Map a gradient at the logits back to a gradient at the raw samples."""
        dhidden = dlogits @ self.w2.T
        dpre = dhidden * (1.0 - cache.hidden**2)
        dfeats = (dpre @ self.w1.T) * FEAT_SCALE
        return features_backward(cache.feat_cache, dfeats, self.feature_cfg)

    def _param_grads(self, cache: ForwardCache, dlogits: np.ndarray) -> list[np.ndarray]:
        dhidden = dlogits @ self.w2.T
        dpre = dhidden * (1.0 - cache.hidden**2)
        dw2 = cache.hidden.T @ dlogits
        db2 = dlogits.sum(axis=0)
        dw1 = cache.scaled.T @ dpre
        db1 = dpre.sum(axis=0)
        return [dw1, db1, dw2, db2]

    def input_gradient(self, samples: np.ndarray, target: str) -> tuple[float, np.ndarray, np.ndarray]:
        """CTC loss for the target plus its gradient w.r.t. the samples.

        Returns (loss, grad_samples, logits); logits are returned so callers
        can decode without a second forward pass.
        """
        samples = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
        cache = self.forward(samples)
        res: CtcLossResult = ctc_loss(cache.logits, target, self.vocab)
        grad = self.backprop_logits_to_samples(cache, res.grad_logits)
        return res.loss, grad, cache.logits


def recognize(w, model: CtcRecognizer, allow_untrained: bool = False) -> str:
    """Transcript of a waveform under the model (features -> logits -> greedy)."""
    return model.recognize(w, allow_untrained=allow_untrained)


def input_gradient(w, target: str, model: CtcRecognizer) -> np.ndarray:
    """Gradient of the CTC loss for the target with respect to the samples."""
    _, grad, _ = model.input_gradient(w, target)
    return grad


@dataclass(frozen=True)
class RecognizerTrainConfig:
    hidden: int = 96
    epochs: int = 80
    lr: float = 2e-3
    stop_cer: float = 0.01
    eval_every: int = 1


@dataclass
class RecognizerTrainReport:
    epochs_run: int
    final_cer: float
    loss_history: list[float] = field(default_factory=list)
    cer_history: list[tuple[int, float]] = field(default_factory=list)


def corpus_cer(model: CtcRecognizer, items) -> float:
    """Mean character error rate of greedy transcripts over corpus items."""
    rates = [cer(model.recognize(it.waveform, allow_untrained=True), it.transcript) for it in items]
    return float(np.mean(rates))


def train_recognizer(
    items,
    vocab: CharVocab = DEFAULT_VOCAB,
    cfg: RecognizerTrainConfig = RecognizerTrainConfig(),
    rng: np.random.Generator | None = None,
    feature_cfg: FeatureConfig = DEFAULT_FEATURES,
) -> CtcRecognizer:
    """Train a fresh recognizer by per-item CTC descent, features precomputed.

    Deterministic given the rng state; the training report is attached to the
    returned model as model.train_report.
    """
    if not items:
        raise ValueError("cannot train on an empty corpus")
    if rng is None:
        rng = np.random.default_rng(0)
    for it in items:
        need = min_frames_required(it.transcript, vocab)
        have = frame_count(it.waveform.samples.size, feature_cfg)
        if have < need:
            raise UnrealizableTargetError(
                f"corpus item {it.id} transcript needs {need} frames, waveform provides {have}"
            )
    model = CtcRecognizer.create(rng, hidden=cfg.hidden, feature_cfg=feature_cfg, vocab=vocab)
    opt = Adam(model.parameters(), lr=cfg.lr)
    feats = [features_forward(it.waveform.samples, model.feature_cfg).feats for it in items]
    report = RecognizerTrainReport(epochs_run=0, final_cer=float("nan"))

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        losses = []
        for j in order:
            scaled = feats[j] * FEAT_SCALE
            hidden = np.tanh(scaled @ model.w1 + model.b1)
            logits = hidden @ model.w2 + model.b2
            res = ctc_loss(logits, items[j].transcript, model.vocab)
            n_frames = logits.shape[0]
            dlogits = res.grad_logits / n_frames
            cache = ForwardCache(feat_cache=None, scaled=scaled, hidden=hidden, logits=logits)
            opt.step(model._param_grads(cache, dlogits))
            losses.append(res.loss / n_frames)
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
        report.loss_history.append(mean_loss)
        report.epochs_run = epoch + 1
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            train_cer = corpus_cer(model, items)
            report.cer_history.append((epoch + 1, train_cer))
            report.final_cer = train_cer
            if train_cer <= cfg.stop_cer:
                break

    if not report.cer_history:
        report.final_cer = corpus_cer(model, items)
    model.trained = True
    model.train_report = report
    return model


def save_recognizer(model: CtcRecognizer, path: str) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "feature_cfg": {
            "frame_len": model.feature_cfg.frame_len,
            "hop": model.feature_cfg.hop,
            "n_bins": model.feature_cfg.n_bins,
            "log_floor": model.feature_cfg.log_floor,
            "mag_eps": model.feature_cfg.mag_eps,
        },
        "vocab": model.vocab.characters,
        "trained": model.trained,
        "weights": {
            "w1": model.w1.tolist(),
            "b1": model.b1.tolist(),
            "w2": model.w2.tolist(),
            "b2": model.b2.tolist(),
        },
    }
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_recognizer(path: str, vocab: CharVocab | None = None) -> CtcRecognizer:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read recognizer checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a recognizer checkpoint (format={payload.get('format')!r})")
    file_vocab = CharVocab(payload["vocab"])
    if vocab is not None and vocab.characters != file_vocab.characters:
        raise CheckpointError(
            f"checkpoint vocabulary {file_vocab.characters!r} does not match expected {vocab.characters!r}"
        )
    fc = payload["feature_cfg"]
    feature_cfg = FeatureConfig(
        frame_len=fc["frame_len"],
        hop=fc["hop"],
        n_bins=fc["n_bins"],
        log_floor=fc["log_floor"],
        mag_eps=fc["mag_eps"],
    )
    w = payload["weights"]
    try:
        model = CtcRecognizer(
            np.array(w["w1"], dtype=np.float64),
            np.array(w["b1"], dtype=np.float64),
            np.array(w["w2"], dtype=np.float64),
            np.array(w["b2"], dtype=np.float64),
            feature_cfg=feature_cfg,
            vocab=file_vocab,
            trained=bool(payload.get("trained", False)),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed recognizer checkpoint {path}: {exc}") from exc
    return model
