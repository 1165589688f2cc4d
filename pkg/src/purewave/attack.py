"""Targeted white-box attack on the recognizer under a peak-level constraint.

Minimises ||delta||_2^2 + c * ctc_loss(clip(x + delta), target) by gradient
descent on delta, starting from delta = 0. The budget tau caps the peak of
delta relative to the peak of x in dB (enforced by scaling delta down after
each step); whenever the greedy transcript hits the target, delta is recorded
and tau is tightened below the achieved level, so the returned perturbation
is the quietest success found.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform, peak_db, quantize_16bit
from .ctc import decode_greedy, is_realizable, min_frames_required
from .features import frame_count
from .optim import Adam
from .recognizer import CtcRecognizer


@dataclass(frozen=True)
class CwConfig:
    c: float = 10.0  # weight of the CTC term against the energy term
    learning_rate: float = 10.0
    max_iterations: int = 5000
    tau_initial: float = float("inf")  # dB cap on peak(delta) relative to peak(x)
    tau_decrement: float = 1.0  # dB tightening applied after each success
    inner_success_patience: int = 500  # iterations allowed without a new success
    optimizer: str = "gd"  # "gd" or "adam"

    def __post_init__(self):
        if self.optimizer not in ("gd", "adam"):
            raise ValueError("optimizer must be 'gd' or 'adam'")
        if self.c <= 0 or self.learning_rate <= 0:
            raise ValueError("c and learning_rate must be positive")
        if self.max_iterations < 1 or self.inner_success_patience < 1 or self.tau_decrement <= 0:
            raise ValueError("max_iterations, inner_success_patience and tau_decrement must be positive")


@dataclass
class AttackResult:
    succeeded: bool
    adversarial: Waveform  # clip(x + delta) for the returned delta
    delta: np.ndarray
    final_tau: float  # achieved dB level on success, the live cap on failure
    iterations_used: int  # gradient steps executed
    loss_trace: list = field(default_factory=list)  # objective value per iteration
    target: str = ""
    transcript: str = ""  # greedy transcript of the returned adversarial audio
    distortion_db: float = float("-inf")  # peak(delta) - peak(x), -inf for delta = 0
    ctc_loss: float = float("nan")
    objective: float = float("nan")  # ||delta||^2 + c * ctc_loss
    diagnostic: str | None = None


def attack(
    x: Waveform,
    target: str,
    model: CtcRecognizer,
    cfg: CwConfig = CwConfig(),
    rng: np.random.Generator | None = None,
) -> AttackResult:
    """Run the attack. Deterministic: delta starts at zero and every update is a
    pure function of (x, target, model, cfg); rng is accepted for interface
    uniformity but never consumed."""
    del rng
    samples = x.samples
    n_frames = frame_count(samples.size, model.feature_cfg)
    if not is_realizable(target, n_frames, model.vocab):
        logits = model.logits(samples)
        return AttackResult(
            succeeded=False,
            adversarial=x.with_samples(np.clip(samples, -1.0, 1.0)),
            delta=np.zeros_like(samples),
            final_tau=cfg.tau_initial,
            iterations_used=0,
            target=target,
            transcript=decode_greedy(logits, model.vocab),
            diagnostic=(
                f"target needs {min_frames_required(target, model.vocab)} frames, "
                f"input provides {n_frames}"
            ),
        )

    x_db = peak_db(samples)
    x_peak = float(np.max(np.abs(samples)))
    tau = cfg.tau_initial
    delta = np.zeros_like(samples)
    opt = Adam([delta], lr=cfg.learning_rate) if cfg.optimizer == "adam" else None

    success: dict | None = None  # last recorded solution
    best_fail_obj = float("inf")
    best_fail: dict | None = None
    since_success = 0
    steps = 0
    trace: list[float] = []
    stop = False

    for _ in range(cfg.max_iterations):
        adv = np.clip(samples + delta, -1.0, 1.0)
        loss, grad_adv, logits = model.input_gradient(adv, target)
        transcript = decode_greedy(logits, model.vocab)
        objective = float(np.sum(delta * delta)) + cfg.c * loss
        trace.append(objective)

        recorded = False
        if transcript == target:
            # only record a success that survives 16-bit quantization, so the
            # adversarial clip still works after a WAV round trip
            quantized = quantize_16bit(adv)
            if decode_greedy(model.logits(quantized), model.vocab) == target:
                eff_delta = adv - samples
                d_db = peak_db(eff_delta) - x_db
                success = {
                    "delta": eff_delta.copy(),
                    "db": d_db,
                    "loss": loss,
                    "objective": float(np.sum(eff_delta**2)) + cfg.c * loss,
                }
                recorded = True
                if not np.isfinite(d_db):
                    stop = True  # delta is exactly zero, nothing quieter exists
                else:
                    tau = d_db - cfg.tau_decrement
                since_success = 0
        if stop:
            break

        if objective < best_fail_obj:
            best_fail_obj = objective
            best_fail = {
                "delta": delta.copy(),
                "loss": loss,
                "objective": objective,
                "transcript": transcript,
            }

        # clip is pass-through inside (-1, 1) and blocks the gradient outside
        mask = (samples + delta > -1.0) & (samples + delta < 1.0)
        grad = 2.0 * delta + cfg.c * grad_adv * mask
        if opt is not None:
            opt.step([grad])
        else:
            delta -= cfg.learning_rate * grad
        steps += 1

        if np.isfinite(tau):
            limit = x_peak * 10.0 ** (tau / 20.0)
            peak = float(np.max(np.abs(delta)))
            if peak > limit and peak > 0.0:
                delta *= limit / peak

        if success is not None and not recorded:
            since_success += 1
            if since_success >= cfg.inner_success_patience:
                break

    if success is not None:
        final_delta = success["delta"]
        adv = np.clip(samples + final_delta, -1.0, 1.0)
        return AttackResult(
            succeeded=True,
            adversarial=x.with_samples(adv),
            delta=final_delta,
            final_tau=success["db"],
            iterations_used=steps,
            loss_trace=trace,
            target=target,
            transcript=target,
            distortion_db=success["db"],
            ctc_loss=success["loss"],
            objective=success["objective"],
        )

    fail = best_fail if best_fail is not None else {
        "delta": delta, "loss": float("nan"), "objective": float("nan"), "transcript": "",
    }
    adv = np.clip(samples + fail["delta"], -1.0, 1.0)
    return AttackResult(
        succeeded=False,
        adversarial=x.with_samples(adv),
        delta=fail["delta"],
        final_tau=tau,
        iterations_used=steps,
        loss_trace=trace,
        target=target,
        transcript=fail["transcript"],
        distortion_db=peak_db(fail["delta"]) - x_db,
        ctc_loss=fail["loss"],
        objective=fail["objective"],
        diagnostic="did not reach the target transcript",
    )


def attack_success_rate(results, model: CtcRecognizer) -> float:
    """Percentage of results whose adversarial audio the model transcribes
    exactly as its target (re-verified, independent of the loop bookkeeping)."""
    results = list(results)
    if not results:
        raise ValueError("no attack results")
    hits = [
        model.recognize(r.adversarial, allow_untrained=True) == r.target for r in results
    ]
    return 100.0 * float(np.mean(hits))


def exact_match_rate(hypotheses, references) -> float:
    hypotheses, references = list(hypotheses), list(references)
    if len(hypotheses) != len(references) or not references:
        raise ValueError("hypotheses and references must be equal-length and non-empty")
    return float(np.mean([h == r for h, r in zip(hypotheses, references)]))
