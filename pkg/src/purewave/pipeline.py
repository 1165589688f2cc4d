"""Staged experiment pipeline: corpus -> train -> attack -> defend -> detect -> report.

Every stage writes its artifacts under one output directory, records a
manifest with content hashes of everything it read and wrote, and verifies
the hashes of upstream artifacts before using them, so silent drift between
stages is an error. Report payloads are deterministic given (config, seed);
wall-clock numbers live only in runtime tables and stage manifests.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys as _sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attack import AttackResult, CwConfig, attack, attack_success_rate
from .audio import Waveform, read_wav, speech_fraction, write_wav
from .config import ExperimentConfig
from .defense import DefendedSystem, sweep
from .denoiser import (
    DenoiserConfig,
    PredictorTrainConfig,
    fresh_noise_mse,
    load_denoiser,
    save_denoiser,
    train_predictor,
)
from .detect import (
    LabeledExample,
    default_omega_grid,
    evaluate_detector,
    fit,
    split_dataset,
)
from .diffusion import PurifierConfig, linear_schedule, purify
from .errors import PipelineError, TrainingGateError
from .metrics import auroc, cer, confusion_matrix
from .recognizer import (
    RecognizerTrainConfig,
    load_recognizer,
    save_recognizer,
    train_recognizer,
)
from .synth import BUCKETS, COVERAGE_SENTENCES, CorpusConfig, CorpusItem, SynthesisConfig, build_corpus, synthesize_sentence
from .vocab import DEFAULT_VOCAB

TOOL_VERSION = "0.1.0"

STAGES = ("corpus", "train", "attack", "defend", "detect", "report")


# ---------------------------------------------------------------- io helpers

def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def dump_json(obj, path: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(canonical_json(obj))


def dump_csv(path: str, fieldnames: list[str], rows: list[dict]) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def load_jsonl(path: str) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ------------------------------------------------------------ paths & stages

@dataclass(frozen=True)
class Paths:
    out: str

    def __getattr__(self, name):  # pragma: no cover - trivial
        raise AttributeError(name)

    @property
    def config(self): return os.path.join(self.out, "config.json")
    @property
    def manifest_dir(self): return os.path.join(self.out, "manifests")
    def manifest(self, stage): return os.path.join(self.manifest_dir, f"{stage}.json")

    @property
    def corpus_manifest(self): return os.path.join(self.out, "corpus", "manifest.jsonl")
    @property
    def corpus_training_manifest(self): return os.path.join(self.out, "corpus", "training_manifest.jsonl")
    def corpus_wav(self, item_id): return os.path.join(self.out, "corpus", "wav", f"{item_id}.wav")
    def training_wav(self, item_id): return os.path.join(self.out, "corpus", "wav_training", f"{item_id}.wav")

    @property
    def recognizer_ckpt(self): return os.path.join(self.out, "train", "recognizer.json")
    @property
    def denoiser_ckpt(self): return os.path.join(self.out, "train", "denoiser.json")
    @property
    def train_report(self): return os.path.join(self.out, "train", "train_report.json")

    def attack_wav(self, item_id): return os.path.join(self.out, "attack", "wav", f"{item_id}.wav")
    def attack_sidecar(self, item_id): return os.path.join(self.out, "attack", "sidecar", f"{item_id}.json")
    @property
    def attack_report_json(self): return os.path.join(self.out, "attack", "attack_report.json")
    @property
    def attack_report_csv(self): return os.path.join(self.out, "attack", "attack_report.csv")
    @property
    def runtime_json(self): return os.path.join(self.out, "attack", "runtime.json")
    @property
    def runtime_csv(self): return os.path.join(self.out, "attack", "runtime.csv")

    @property
    def defense_report_json(self): return os.path.join(self.out, "defend", "defense_report.json")
    @property
    def defense_report_csv(self): return os.path.join(self.out, "defend", "defense_report.csv")

    @property
    def detection_report_json(self): return os.path.join(self.out, "detect", "detection_report.json")
    @property
    def detection_report_csv(self): return os.path.join(self.out, "detect", "detection_report.csv")

    @property
    def summary_json(self): return os.path.join(self.out, "report", "summary.json")
    @property
    def summary_csv(self): return os.path.join(self.out, "report", "summary.csv")


def _rel(paths: Paths, p: str) -> str:
    return os.path.relpath(p, paths.out)


def _snapshot_config(cfg: ExperimentConfig, paths: Paths) -> str:
    """Write (or verify) the resolved config snapshot; returns its hash."""
    os.makedirs(paths.out, exist_ok=True)
    blob = canonical_json(cfg.to_dict())
    if os.path.exists(paths.config):
        existing = open(paths.config).read()
        if existing != blob:
            raise PipelineError(
                f"config drift: {paths.config} was produced by a different configuration; "
                "use a fresh --out directory or remove the old one"
            )
    else:
        with open(paths.config, "w") as fh:
            fh.write(blob)
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_manifest(
    paths: Paths,
    stage: str,
    config_sha: str,
    seed: int,
    inputs: dict[str, str],
    outputs: list[str],
    elapsed: float,
    timings: dict | None = None,
) -> dict:
    manifest = {
        "stage": stage,
        "tool_version": TOOL_VERSION,
        "config_sha256": config_sha,
        "seed": seed,
        "elapsed_seconds": elapsed,
        "finished_unix": time.time(),
        "inputs": inputs,
        "outputs": {_rel(paths, p): sha256_file(p) for p in sorted(outputs)},
        "timings": timings or {},
    }
    dump_json(manifest, paths.manifest(stage))
    return manifest


def _require_stage(paths: Paths, stage: str, needed_by: str) -> dict:
    mpath = paths.manifest(stage)
    if not os.path.exists(mpath):
        raise PipelineError(
            f"stage '{needed_by}' needs the outputs of stage '{stage}'; run `purewave {stage}` first"
        )
    with open(mpath) as fh:
        return json.load(fh)


def _verify_outputs(paths: Paths, manifest: dict) -> dict[str, str]:
    """Check that a stage's recorded outputs still hash the same; returns them."""
    for rel, recorded in manifest["outputs"].items():
        full = os.path.join(paths.out, rel)
        if not os.path.exists(full):
            raise PipelineError(f"artifact {rel} from stage '{manifest['stage']}' is missing")
        now = sha256_file(full)
        if now != recorded:
            raise PipelineError(
                f"artifact {rel} changed since stage '{manifest['stage']}' wrote it "
                f"(recorded {recorded[:12]}, found {now[:12]}); re-run the stage"
            )
    return dict(manifest["outputs"])


# ------------------------------------------------------------- corpus stage

def _corpus_items_to_disk(items, wav_path_fn, manifest_path, paths: Paths) -> list[str]:
    written = []
    lines = []
    for it in items:
        wp = wav_path_fn(it.id)
        os.makedirs(os.path.dirname(wp), exist_ok=True)
        write_wav(it.waveform, wp)
        written.append(wp)
        lines.append(
            {
                "id": it.id,
                "bucket": it.bucket,
                "transcript": it.transcript,
                "wav_path": _rel(paths, wp),
                "speech_fraction": speech_fraction(it.waveform),
            }
        )
    os.makedirs(os.path.dirname(manifest_path), exist_ok=True)
    with open(manifest_path, "w") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    written.append(manifest_path)
    return written


def load_corpus(paths: Paths, training: bool = False) -> list[CorpusItem]:
    manifest = paths.corpus_training_manifest if training else paths.corpus_manifest
    if not os.path.exists(manifest):
        raise PipelineError("corpus artifacts not found; run `purewave corpus` first")
    items = []
    for row in load_jsonl(manifest):
        w = read_wav(os.path.join(paths.out, row["wav_path"]))
        items.append(CorpusItem(w, row["transcript"], row["bucket"], row["id"]))
    return items


def stage_corpus(cfg: ExperimentConfig, out: str, workers: int = 1) -> dict:
    del workers  # synthesis is cheap; stage runs single-threaded
    paths = Paths(out)
    config_sha = _snapshot_config(cfg, paths)
    t0 = time.perf_counter()

    warnings = [
        f"bucket {b!r} omitted (count 0)"
        for b in BUCKETS
        if int(cfg.corpus.counts.get(b, 0)) == 0
    ]
    eval_cfg = CorpusConfig(synthesis=SynthesisConfig(sample_rate=cfg.sample_rate))
    items = build_corpus(cfg.corpus.counts, cfg.seed, eval_cfg)

    train_synth = SynthesisConfig(sample_rate=cfg.sample_rate, noise_snr_db=cfg.corpus.training_snr_db)
    train_cfg = CorpusConfig(synthesis=train_synth, noise_snr_jitter_db=cfg.corpus.training_snr_jitter_db)
    training_items = build_corpus(cfg.corpus.training_counts, cfg.seed + 1, train_cfg)
    # fixed full-alphabet sentences so every character is seen in training
    for j, text in enumerate(COVERAGE_SENTENCES):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed + 1, 997, j]))
        w = synthesize_sentence(text, train_synth, rng)
        training_items.append(CorpusItem(w, text, "long", f"coverage-{j:03d}"))

    outputs = _corpus_items_to_disk(items, paths.corpus_wav, paths.corpus_manifest, paths)
    outputs += _corpus_items_to_disk(
        training_items, paths.training_wav, paths.corpus_training_manifest, paths
    )

    elapsed = time.perf_counter() - t0
    per_bucket = {b: sum(1 for it in items if it.bucket == b) for b in BUCKETS}
    manifest = _write_manifest(
        paths, "corpus", config_sha, cfg.seed, {}, outputs, elapsed,
        timings={"items": len(items), "training_items": len(training_items)},
    )
    for w in warnings:
        print(f"warning: {w}", file=_sys.stderr)
    return {"manifest": manifest, "counts": per_bucket, "warnings": warnings}


# -------------------------------------------------------------- train stage

def stage_train(cfg: ExperimentConfig, out: str, workers: int = 1, resume: bool = False) -> dict:
    del workers  # model training is inherently sequential here
    paths = Paths(out)
    config_sha = _snapshot_config(cfg, paths)
    corpus_manifest = _require_stage(paths, "corpus", "train")
    inputs = _verify_outputs(paths, corpus_manifest)
    t0 = time.perf_counter()

    if resume:
        if not (os.path.exists(paths.recognizer_ckpt) and os.path.exists(paths.denoiser_ckpt)):
            raise PipelineError("--resume requires existing checkpoints; run `purewave train` without it")
        old = _require_stage(paths, "train", "train --resume")
        _verify_outputs(paths, old)
        return {"manifest": old, "resumed": True}

    training_items = load_corpus(paths, training=True)
    eval_items = load_corpus(paths)

    rec_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    model = train_recognizer(
        training_items,
        DEFAULT_VOCAB,
        RecognizerTrainConfig(
            hidden=cfg.recognizer.hidden,
            epochs=cfg.recognizer.epochs,
            lr=cfg.recognizer.lr,
            stop_cer=cfg.recognizer.stop_cer,
        ),
        rng=rec_rng,
    )
    rec_report = model.train_report

    schedule = linear_schedule(cfg.schedule.n_steps, cfg.schedule.beta_start, cfg.schedule.beta_end)
    pred_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    net = train_predictor(
        [it.waveform for it in training_items],
        schedule,
        PredictorTrainConfig(steps=cfg.predictor.steps, lr=cfg.predictor.lr, crop_len=cfg.predictor.crop_len),
        rng=pred_rng,
        arch=DenoiserConfig(
            channels=cfg.predictor.channels,
            dilations=tuple(cfg.predictor.dilations),
            emb_dim=cfg.predictor.emb_dim,
        ),
    )
    pred_report = net.train_report
    fresh_mse = fresh_noise_mse(net)

    depth = cfg.gates.purified_check_depth
    purifier = PurifierConfig(schedule, net.predict, depth)
    purified_cers = []
    for i, it in enumerate(eval_items):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4, i]))
        cleaned = purify(it.waveform.samples, purifier, rng)
        purified_cers.append(cer(model.recognize(cleaned, allow_untrained=True), it.transcript))
    purified_cer = float(np.mean(purified_cers))

    gates = {
        "recognizer_cer": {
            "value": rec_report.final_cer,
            "threshold": cfg.gates.max_train_cer,
            "passed": rec_report.final_cer < cfg.gates.max_train_cer,
        },
        "predictor_loss_improvement": {
            "initial": pred_report.initial_loss,
            "final": pred_report.final_loss,
            "threshold_ratio": cfg.gates.min_loss_improvement,
            "passed": pred_report.final_loss < cfg.gates.min_loss_improvement * pred_report.initial_loss,
        },
        "predictor_fresh_mse": {
            "value": fresh_mse,
            "threshold": cfg.gates.max_fresh_mse,
            "passed": fresh_mse < cfg.gates.max_fresh_mse,
        },
        "purified_cer": {
            "value": purified_cer,
            "depth": depth,
            "threshold": cfg.gates.max_purified_cer,
            "passed": purified_cer < cfg.gates.max_purified_cer,
        },
    }

    save_recognizer(model, paths.recognizer_ckpt)
    save_denoiser(net, paths.denoiser_ckpt)
    report = {
        "recognizer": {
            "hidden": cfg.recognizer.hidden,
            "epochs_run": rec_report.epochs_run,
            "final_cer": rec_report.final_cer,
            "first_epoch_loss": rec_report.loss_history[0],
            "last_epoch_loss": rec_report.loss_history[-1],
        },
        "predictor": {
            "steps": pred_report.steps_run,
            "initial_loss": pred_report.initial_loss,
            "final_loss": pred_report.final_loss,
            "fresh_noise_mse": fresh_mse,
        },
        "gates": gates,
    }
    dump_json(report, paths.train_report)

    elapsed = time.perf_counter() - t0
    manifest = _write_manifest(
        paths, "train", config_sha, cfg.seed, inputs,
        [paths.recognizer_ckpt, paths.denoiser_ckpt, paths.train_report],
        elapsed,
    )
    failed = [name for name, g in gates.items() if not g["passed"]]
    if failed:
        raise TrainingGateError(
            f"training gates failed: {', '.join(failed)} (see {paths.train_report})"
        )
    return {"manifest": manifest, "report": report, "resumed": False}


# ------------------------------------------------------------- attack stage

_ATTACK_CTX: dict = {}


def _attack_init(model_blob, cw: CwConfig):
    _ATTACK_CTX["model"] = model_blob
    _ATTACK_CTX["cw"] = cw


def _attack_task(payload):
    item, target = payload
    t0 = time.perf_counter()
    result = attack(item.waveform, target, _ATTACK_CTX["model"], _ATTACK_CTX["cw"])
    return item.id, result, time.perf_counter() - t0


def _cw_from_config(cfg: ExperimentConfig) -> CwConfig:
    tau_init = cfg.attack.tau_initial
    return CwConfig(
        c=cfg.attack.c,
        learning_rate=cfg.attack.learning_rate,
        max_iterations=cfg.attack.max_iterations,
        tau_initial=float("inf") if tau_init is None else float(tau_init),
        tau_decrement=cfg.attack.tau_decrement,
        inner_success_patience=cfg.attack.inner_success_patience,
        optimizer=cfg.attack.optimizer,
    )


def stage_attack(cfg: ExperimentConfig, out: str, workers: int = 1) -> dict:
    paths = Paths(out)
    config_sha = _snapshot_config(cfg, paths)
    inputs = {}
    inputs.update(_verify_outputs(paths, _require_stage(paths, "corpus", "attack")))
    inputs.update(_verify_outputs(paths, _require_stage(paths, "train", "attack")))
    t0 = time.perf_counter()

    model = load_recognizer(paths.recognizer_ckpt, vocab=DEFAULT_VOCAB)
    items = load_corpus(paths)
    cw = _cw_from_config(cfg)
    missing = [b for b in sorted({it.bucket for it in items}) if b not in cfg.attack.targets]
    if missing:
        raise PipelineError(f"no attack target configured for buckets: {missing}")

    payloads = [(it, cfg.attack.targets[it.bucket]) for it in items]
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_attack_init, initargs=(model, cw)
        ) as pool:
            outcomes = list(pool.map(_attack_task, payloads))
    else:
        _attack_init(model, cw)
        outcomes = [_attack_task(p) for p in payloads]

    results: list[AttackResult] = []
    seconds: dict[str, list[float]] = {}
    outputs = []
    for (item, target), (item_id, result, secs) in zip(payloads, outcomes):
        results.append(result)
        seconds.setdefault(item.bucket, []).append(secs)
        wav_path = paths.attack_wav(item_id)
        os.makedirs(os.path.dirname(wav_path), exist_ok=True)
        write_wav(result.adversarial, wav_path)
        sidecar = {
            "id": item_id,
            "bucket": item.bucket,
            "target": target,
            "succeeded": result.succeeded,
            "final_tau": result.final_tau,
            "iterations_used": result.iterations_used,
            "distortion_db": result.distortion_db,
            "transcript": result.transcript,
            "ctc_loss": result.ctc_loss,
            "objective": result.objective,
            "diagnostic": result.diagnostic,
            "seed": cfg.seed,
        }
        dump_json(sidecar, paths.attack_sidecar(item_id))
        outputs += [wav_path, paths.attack_sidecar(item_id)]

    overall_rate = attack_success_rate(results, model)
    buckets = sorted({it.bucket for it in items})
    bucket_rows = []
    for b in [*buckets, "all"]:
        sel = [r for it, r in zip(items, results) if b == "all" or it.bucket == b]
        succ = [r for r in sel if r.succeeded]
        dists = [r.distortion_db for r in succ if np.isfinite(r.distortion_db)]
        bucket_rows.append(
            {
                "bucket": b,
                "items": len(sel),
                "successes": len(succ),
                "success_rate_pct": 100.0 * len(succ) / len(sel),
                "mean_distortion_db": float(np.mean(dists)) if dists else None,
                "mean_iterations": float(np.mean([r.iterations_used for r in sel])),
            }
        )
    attack_report = {
        "success_rate_pct": overall_rate,
        "items": len(items),
        "per_bucket": bucket_rows,
        "config": {
            "c": cw.c,
            "learning_rate": cw.learning_rate,
            "max_iterations": cw.max_iterations,
            "tau_decrement": cw.tau_decrement,
            "inner_success_patience": cw.inner_success_patience,
            "optimizer": cw.optimizer,
        },
    }
    dump_json(attack_report, paths.attack_report_json)
    dump_csv(
        paths.attack_report_csv,
        ["bucket", "items", "successes", "success_rate_pct", "mean_distortion_db", "mean_iterations"],
        bucket_rows,
    )
    outputs += [paths.attack_report_json, paths.attack_report_csv]

    runtime_rows = [
        {
            "bucket": b,
            "items": len(secs_list),
            "mean_seconds": float(np.mean(secs_list)),
            "total_seconds": float(np.sum(secs_list)),
        }
        for b, secs_list in sorted(seconds.items())
    ]
    all_secs = [s for lst in seconds.values() for s in lst]
    runtime_rows.append(
        {
            "bucket": "all",
            "items": len(all_secs),
            "mean_seconds": float(np.mean(all_secs)),
            "total_seconds": float(np.sum(all_secs)),
        }
    )
    dump_json({"per_bucket": runtime_rows}, paths.runtime_json)
    dump_csv(paths.runtime_csv, ["bucket", "items", "mean_seconds", "total_seconds"], runtime_rows)

    elapsed = time.perf_counter() - t0
    manifest = _write_manifest(
        paths, "attack", config_sha, cfg.seed, inputs, outputs, elapsed,
        timings={r["bucket"]: r["mean_seconds"] for r in runtime_rows},
    )
    return {"manifest": manifest, "report": attack_report}


# ---------------------------------------------------- defended-system loading

@dataclass(frozen=True)
class AttackedItem:
    """Adversarial counterpart of a corpus item, reloaded from stage artifacts."""

    id: str
    target: str
    succeeded: bool
    adversarial: Waveform


def load_attacked(paths: Paths, items) -> list[AttackedItem]:
    attacked = []
    for it in items:
        sidecar_path = paths.attack_sidecar(it.id)
        if not os.path.exists(sidecar_path):
            raise PipelineError("attack artifacts not found; run `purewave attack` first")
        with open(sidecar_path) as fh:
            sidecar = json.load(fh)
        attacked.append(
            AttackedItem(
                id=it.id,
                target=sidecar["target"],
                succeeded=bool(sidecar["succeeded"]),
                adversarial=read_wav(paths.attack_wav(it.id)),
            )
        )
    return attacked


def load_defended_system(cfg: ExperimentConfig, paths: Paths) -> DefendedSystem:
    model = load_recognizer(paths.recognizer_ckpt, vocab=DEFAULT_VOCAB)
    schedule = linear_schedule(cfg.schedule.n_steps, cfg.schedule.beta_start, cfg.schedule.beta_end)
    net = load_denoiser(paths.denoiser_ckpt, schedule=schedule)
    return DefendedSystem(PurifierConfig(schedule, net.predict, 0), model, cfg.sample_rate)


# ------------------------------------------------------------- defend stage

def stage_defend(cfg: ExperimentConfig, out: str, workers: int = 1) -> dict:
    paths = Paths(out)
    config_sha = _snapshot_config(cfg, paths)
    inputs = {}
    for needed in ("corpus", "train", "attack"):
        inputs.update(_verify_outputs(paths, _require_stage(paths, needed, "defend")))
    t0 = time.perf_counter()

    items = load_corpus(paths)
    attacked = load_attacked(paths, items)
    system = load_defended_system(cfg, paths)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5]))
    report = sweep(
        items,
        attacked,
        cfg.defend.n_values,
        system,
        runs=cfg.defend.runs,
        rng=rng,
        ci_level=cfg.defend.ci_level,
        workers=workers,
    )

    zero_success = [
        n
        for n in report.n_values
        if all(v == 0.0 for v in report.row(n, "attacked", "attack_success")["values"])
    ]
    n_max = max(report.n_values)
    clean_first = report.row(0, "clean", "asr_performance")["mean"]
    clean_last = report.row(n_max, "clean", "asr_performance")["mean"]
    summary = {
        "zero_success_depths": zero_success,
        "clean_performance_n0": clean_first,
        "clean_performance_nmax": clean_last,
        "n_max": n_max,
        "clean_degradation_non_increasing": clean_last <= clean_first,
    }
    payload = {
        "n_values": report.n_values,
        "runs": report.runs,
        "rows": report.rows,
        "summary": summary,
    }
    dump_json(payload, paths.defense_report_json)
    dump_csv(
        paths.defense_report_csv,
        ["n_star", "condition", "bucket", "metric", "mean", "ci_low", "ci_high", "runs"],
        report.rows,
    )

    elapsed = time.perf_counter() - t0
    manifest = _write_manifest(
        paths, "defend", config_sha, cfg.seed, inputs,
        [paths.defense_report_json, paths.defense_report_csv],
        elapsed,
    )
    return {"manifest": manifest, "report": payload}


# ------------------------------------------------------------- detect stage

def _bucket_detection_metrics(records: list[dict]) -> dict:
    flagged = [r["flagged"] for r in records]
    actual = [r["is_adversarial"] for r in records]
    cm = confusion_matrix(flagged, actual)
    return {
        "examples": len(records),
        "confusion": cm.as_dict(),
        "accuracy": cm.accuracy,
        "tpr": cm.tpr,
        "fpr": cm.fpr,
        "auroc": auroc([r["divergence"] for r in records], actual),
    }


def stage_detect(cfg: ExperimentConfig, out: str, workers: int = 1) -> dict:
    del workers  # the per-example purifier calls are cheap at desk scale
    paths = Paths(out)
    config_sha = _snapshot_config(cfg, paths)
    inputs = {}
    for needed in ("corpus", "train", "attack"):
        inputs.update(_verify_outputs(paths, _require_stage(paths, needed, "detect")))
    t0 = time.perf_counter()

    items = load_corpus(paths)
    attacked = load_attacked(paths, items)
    system = load_defended_system(cfg, paths)

    examples = []
    for it, atk in zip(items, attacked):
        examples.append(LabeledExample(it.waveform, False, it.bucket, it.id))
        examples.append(LabeledExample(atk.adversarial, True, it.bucket, f"{it.id}-adv"))

    calibration, test = split_dataset(
        examples, cfg.detect.fit_fraction, np.random.default_rng(np.random.SeedSequence([cfg.seed, 6]))
    )
    dm = fit(
        calibration,
        cfg.detect.n_candidates,
        default_omega_grid(cfg.detect.omega_step),
        system,
        rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 7])),
    )
    evaluation = evaluate_detector(
        dm, test, system, rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 8]))
    )

    per_bucket = {}
    for b in sorted({r["bucket"] for r in evaluation.records}):
        per_bucket[b] = _bucket_detection_metrics([r for r in evaluation.records if r["bucket"] == b])
    overall = _bucket_detection_metrics(evaluation.records)

    offsets = [-0.02, -0.01, 0.0, 0.01, 0.02]
    sensitivity = {
        f"{off:+.2f}": evaluation.accuracy_at(dm.omega + off) for off in offsets
    }

    payload = {
        "fitted": {
            "n_star": dm.n_star,
            "omega": dm.omega,
            "fit_accuracy": dm.fit_accuracy,
            "fitted_on": dm.fitted_on,
            "candidate_scores": dm.candidate_scores,
        },
        "reference_operating_point": {
            "n_star": cfg.detect.reference_n_star,
            "omega": cfg.detect.reference_omega,
        },
        "calibration": dm.calibration,
        "test": {"overall": overall, "per_bucket": per_bucket},
        "records": evaluation.records,
        "threshold_sensitivity": sensitivity,
        "split": {"calibration": len(calibration), "test": len(test)},
    }
    dump_json(payload, paths.detection_report_json)

    csv_rows = []
    for b, metrics in [*sorted(per_bucket.items()), ("all", overall)]:
        cmx = metrics["confusion"]
        csv_rows.append(
            {
                "bucket": b,
                "examples": metrics["examples"],
                "tn": cmx["tn"],
                "fn": cmx["fn"],
                "fp": cmx["fp"],
                "tp": cmx["tp"],
                "accuracy": metrics["accuracy"],
                "tpr": metrics["tpr"],
                "fpr": metrics["fpr"],
                "auroc": f"{metrics['auroc']:.2f}",
            }
        )
    dump_csv(
        paths.detection_report_csv,
        ["bucket", "examples", "tn", "fn", "fp", "tp", "accuracy", "tpr", "fpr", "auroc"],
        csv_rows,
    )

    elapsed = time.perf_counter() - t0
    manifest = _write_manifest(
        paths, "detect", config_sha, cfg.seed, inputs,
        [paths.detection_report_json, paths.detection_report_csv],
        elapsed,
    )
    return {"manifest": manifest, "report": payload}


# ------------------------------------------------------------- report stage

def stage_report(cfg: ExperimentConfig, out: str, workers: int = 1) -> dict:
    del workers
    paths = Paths(out)
    config_sha = _snapshot_config(cfg, paths)
    inputs = {}
    for needed in ("corpus", "train", "attack", "defend", "detect"):
        inputs.update(_verify_outputs(paths, _require_stage(paths, needed, "report")))
    t0 = time.perf_counter()

    with open(paths.train_report) as fh:
        train_report = json.load(fh)
    with open(paths.attack_report_json) as fh:
        attack_report = json.load(fh)
    with open(paths.defense_report_json) as fh:
        defense_report = json.load(fh)
    with open(paths.detection_report_json) as fh:
        detection_report = json.load(fh)
    corpus_rows = load_jsonl(paths.corpus_manifest)

    counts = {}
    for row in corpus_rows:
        counts[row["bucket"]] = counts.get(row["bucket"], 0) + 1

    summary = {
        "seed": cfg.seed,
        "corpus": {"counts": counts, "items": len(corpus_rows)},
        "train": {
            "recognizer_cer": train_report["gates"]["recognizer_cer"]["value"],
            "purified_cer": train_report["gates"]["purified_cer"]["value"],
            "gates_passed": all(g["passed"] for g in train_report["gates"].values()),
        },
        "attack": {
            "success_rate_pct": attack_report["success_rate_pct"],
            "items": attack_report["items"],
        },
        "defend": defense_report["summary"],
        "detect": {
            "fitted": detection_report["fitted"],
            "reference_operating_point": detection_report["reference_operating_point"],
            "test_overall": detection_report["test"]["overall"],
        },
    }
    dump_json(summary, paths.summary_json)

    kv_rows = []

    def _flatten(prefix: str, obj) -> None:
        if isinstance(obj, dict):
            for k in sorted(obj):
                _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k])
        elif isinstance(obj, list):
            kv_rows.append({"key": prefix, "value": json.dumps(obj)})
        else:
            kv_rows.append({"key": prefix, "value": obj})

    _flatten("", summary)
    dump_csv(paths.summary_csv, ["key", "value"], kv_rows)

    elapsed = time.perf_counter() - t0
    manifest = _write_manifest(
        paths, "report", config_sha, cfg.seed, inputs,
        [paths.summary_json, paths.summary_csv],
        elapsed,
    )
    return {"manifest": manifest, "report": summary}


STAGE_FUNCS = {
    "corpus": stage_corpus,
    "train": stage_train,
    "attack": stage_attack,
    "defend": stage_defend,
    "detect": stage_detect,
    "report": stage_report,
}
