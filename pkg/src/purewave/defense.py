"""Defended recognizer (purify, then recognize) and the purification sweep.

The sweep measures, per purification depth n_star and per bucket, how the
defended system behaves on clean and attacked audio: transcription
performance (1 - CER against the ground truth) and the percentage of attacked
items still transcribed exactly as the attacker's target. Depth 0 is the
undefended baseline. Attacks are computed once by the caller; only the
purification noise is redrawn per run, and confidence intervals are taken
across runs.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .diffusion import PurifierConfig, purify
from .metrics import cer, confidence_interval
from .recognizer import CtcRecognizer


@dataclass
class DefendedSystem:
    purifier: PurifierConfig
    model: CtcRecognizer
    sample_rate: int = 16000

    def samples_of(self, x) -> np.ndarray:
        if isinstance(x, Waveform):
            if x.sample_rate != self.sample_rate:
                raise ValueError(f"waveform rate {x.sample_rate} != system rate {self.sample_rate}")
            return x.samples
        return np.asarray(x, dtype=np.float64)


def ss(x, n_star: int, sys: DefendedSystem, rng: np.random.Generator) -> str:
    """Transcript of the purified input: recognize(purify(x, n_star))."""
    out = purify(sys.samples_of(x), sys.purifier.with_depth(n_star), rng)
    return sys.model.recognize(out, allow_untrained=True)


def purified_waveform(x, n_star: int, sys: DefendedSystem, rng: np.random.Generator) -> Waveform:
    out = purify(sys.samples_of(x), sys.purifier.with_depth(n_star), rng)
    return Waveform(out, sys.sample_rate)


def _row(n_star, condition, bucket, metric, values, runs, ci_level) -> dict:
    mean, lo, hi = confidence_interval(values, ci_level)
    return {
        "n_star": n_star,
        "condition": condition,
        "bucket": bucket,
        "metric": metric,
        "mean": mean,
        "ci_low": lo,
        "ci_high": hi,
        "runs": runs,
        "values": list(values),
    }


@dataclass
class DefenseSweepReport:
    n_values: list[int]  # includes the n_star = 0 baseline
    runs: int
    rows: list[dict]  # long format: (n_star, condition, bucket, metric, ...)

    def row(self, n_star: int, condition: str, metric: str, bucket: str = "all") -> dict:
        for r in self.rows:
            if (
                r["n_star"] == n_star
                and r["condition"] == condition
                and r["bucket"] == bucket
                and r["metric"] == metric
            ):
                return r
        raise KeyError(f"no sweep row for ({n_star}, {condition}, {bucket}, {metric})")


_SWEEP_CTX: dict = {}


def _sweep_init(items, attacks, system, root) -> None:
    _SWEEP_CTX.update(items=items, attacks=attacks, system=system, root=root)


def _sweep_task(task):
    n, r = task
    items = _SWEEP_CTX["items"]
    attacks = _SWEEP_CTX["attacks"]
    system = _SWEEP_CTX["system"]
    root = _SWEEP_CTX["root"]
    clean_hyps, adv_hyps = [], []
    for i, (it, atk) in enumerate(zip(items, attacks)):
        rng_clean = np.random.default_rng(np.random.SeedSequence([root, r, i, n, 0]))
        rng_adv = np.random.default_rng(np.random.SeedSequence([root, r, i, n, 1]))
        clean_hyps.append(ss(it.waveform, n, system, rng_clean))
        adv_hyps.append(ss(atk.adversarial, n, system, rng_adv))
    return n, r, {"clean": clean_hyps, "adv": adv_hyps}


def sweep(
    items,
    attacks,
    n_values,
    sys: DefendedSystem,
    runs: int = 10,
    rng: np.random.Generator | None = None,
    ci_level: float = 0.95,
    workers: int = 1,
) -> DefenseSweepReport:
    """Evaluate the defended system over purification depths and runs.

    items: corpus items with ground-truth transcripts; attacks: matching
    attack results (same order) giving each item's adversarial audio and
    target. Per-(run, item, depth, condition) noise streams are derived from
    one root seed so results are order- and worker-independent.
    """
    items, attacks = list(items), list(attacks)
    if len(items) != len(attacks) or not items:
        raise ValueError("items and attacks must be equal-length and non-empty")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    root = int(rng.integers(0, 2**63))
    depths = sorted(set([0, *n_values]))
    buckets = sorted({it.bucket for it in items})

    tasks = [(n, r) for n in depths for r in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_sweep_init, initargs=(items, attacks, sys, root)
        ) as pool:
            outcomes = list(pool.map(_sweep_task, tasks))
    else:
        _sweep_init(items, attacks, sys, root)
        outcomes = [_sweep_task(t) for t in tasks]

    per_run: dict[int, list] = {n: [None] * runs for n in depths}
    for n, r, hyps in outcomes:
        per_run[n][r] = hyps

    rows = []
    for n in depths:
        for bucket in [*buckets, "all"]:
            idx = [i for i, it in enumerate(items) if bucket == "all" or it.bucket == bucket]
            clean_perf, adv_perf, success = [], [], []
            for run in per_run[n]:
                clean_perf.append(
                    float(np.mean([max(0.0, 1.0 - cer(run["clean"][i], items[i].transcript)) for i in idx]))
                )
                adv_perf.append(
                    float(np.mean([max(0.0, 1.0 - cer(run["adv"][i], items[i].transcript)) for i in idx]))
                )
                success.append(
                    100.0 * float(np.mean([run["adv"][i] == attacks[i].target for i in idx]))
                )
            rows.append(_row(n, "clean", bucket, "asr_performance", clean_perf, runs, ci_level))
            rows.append(_row(n, "attacked", bucket, "asr_performance", adv_perf, runs, ci_level))
            rows.append(_row(n, "attacked", bucket, "attack_success", success, runs, ci_level))

    return DefenseSweepReport(n_values=depths, runs=runs, rows=rows)
