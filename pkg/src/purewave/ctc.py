"""CTC loss, analytic gradient, and greedy decoding over a character vocabulary.

The forward/backward recursions run in log space over the blank-augmented
label sequence (blank, l1, blank, l2, ..., blank). Both passes fold the frame
emission probability in at time t, so the state posterior divides it back out
once. The gradient with respect to the logits is softmax(logits) - posterior,
which is exact and needs no autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnrealizableTargetError
from .vocab import CharVocab, DEFAULT_VOCAB


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def min_frames_required(target: str, vocab: CharVocab = DEFAULT_VOCAB) -> int:
    """Shortest logit sequence that can emit the target: its length plus one
    mandatory blank between each adjacent repeated character."""
    labels = vocab.encode(target)
    repeats = int(np.sum(labels[1:] == labels[:-1])) if labels.size > 1 else 0
    return labels.size + repeats


def is_realizable(target: str, n_frames: int, vocab: CharVocab = DEFAULT_VOCAB) -> bool:
    return n_frames >= min_frames_required(target, vocab)


def _extended_labels(labels: np.ndarray, blank: int) -> np.ndarray:
    ext = np.full(2 * labels.size + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


@dataclass
class CtcLossResult:
    loss: float  # negative log-probability of the target under the logits
    grad_logits: np.ndarray  # (frames, classes), d loss / d logits


def ctc_loss(
    logits: np.ndarray, target: str, vocab: CharVocab = DEFAULT_VOCAB
) -> CtcLossResult:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != vocab.num_classes:
        raise ValueError(f"logits must have shape (frames, {vocab.num_classes})")
    n_frames = logits.shape[0]
    labels = vocab.encode(target)
    need = min_frames_required(target, vocab)
    if n_frames < need:
        raise UnrealizableTargetError(
            f"target {target!r} needs at least {need} frames, got {n_frames}"
        )

    blank = vocab.blank_index
    ext = _extended_labels(labels, blank)
    n_states = ext.size
    logp = log_softmax(logits)
    logp_ext = logp[:, ext]  # (frames, states)

    # A state may also hop over the preceding blank when the labels two back
    # and ahead differ (standard skip transition).
    can_skip = np.zeros(n_states, dtype=bool)
    if n_states > 2:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    neg_inf = -np.inf
    alpha = np.full((n_frames, n_states), neg_inf)
    alpha[0, 0] = logp_ext[0, 0]
    if n_states > 1:
        alpha[0, 1] = logp_ext[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        stay = prev
        step = np.full(n_states, neg_inf)
        step[1:] = prev[:-1]
        acc = np.logaddexp(stay, step)
        skip = np.full(n_states, neg_inf)
        skip[2:] = np.where(can_skip[2:], prev[:-2], neg_inf)
        acc = np.logaddexp(acc, skip)
        alpha[t] = logp_ext[t] + acc

    if n_states > 1:
        log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    else:
        log_z = alpha[-1, -1]
    if not np.isfinite(log_z):
        raise UnrealizableTargetError(
            f"target {target!r} has zero probability under these logits"
        )

    beta = np.full((n_frames, n_states), neg_inf)
    beta[-1, -1] = logp_ext[-1, -1]
    if n_states > 1:
        beta[-1, -2] = logp_ext[-1, -2]
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = np.full(n_states, neg_inf)
        step[:-1] = nxt[1:]
        acc = np.logaddexp(stay, step)
        skip = np.full(n_states, neg_inf)
        if n_states > 2:
            skip[:-2] = np.where(can_skip[2:], nxt[2:], neg_inf)
        acc = np.logaddexp(acc, skip)
        beta[t] = logp_ext[t] + acc

    # alpha and beta both carry the emission at t, so divide it out once.
    log_post = alpha + beta - logp_ext - log_z
    gamma = np.zeros_like(logp)
    t_idx = np.broadcast_to(np.arange(n_frames)[:, None], log_post.shape)
    s_idx = np.broadcast_to(ext[None, :], log_post.shape)
    with np.errstate(under="ignore"):
        np.add.at(gamma, (t_idx, s_idx), np.exp(log_post))

    grad = np.exp(logp) - gamma
    return CtcLossResult(loss=float(-log_z), grad_logits=grad)


def decode_greedy(logits: np.ndarray, vocab: CharVocab = DEFAULT_VOCAB) -> str:
    """Best-path decode: frame-wise argmax, collapse repeats, drop blanks."""
    logits = np.asarray(logits)
    best = np.argmax(logits, axis=-1)
    out = []
    prev = -1
    for k in best:
        if k != prev and k != vocab.blank_index:
            out.append(vocab.characters[k])
        prev = int(k)
    return "".join(out)
