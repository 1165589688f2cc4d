import hashlib
import json
import os

import pytest

from purewave import pipeline
from purewave.config import load_config
from purewave.denoiser import load_denoiser
from purewave.errors import PipelineError, TrainingGateError
from purewave.pipeline import (
    Paths,
    canonical_json,
    load_attacked,
    load_corpus,
    load_defended_system,
    sha256_file,
    stage_attack,
    stage_corpus,
    stage_train,
)
from purewave.recognizer import load_recognizer

from conftest import MICRO_OVERRIDES


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ------------------------------------------------------- artifact structure


def test_every_stage_writes_a_verifiable_manifest(micro_run):
    paths = Paths(micro_run["out"])
    for stage in pipeline.STAGES:
        m = _read_json(paths.manifest(stage))
        assert m["stage"] == stage
        assert m["tool_version"] == pipeline.TOOL_VERSION
        assert m["seed"] == micro_run["config"].seed
        assert m["elapsed_seconds"] >= 0.0
        assert m["finished_unix"] > 0
        assert isinstance(m["inputs"], dict)
        assert m["outputs"], f"stage {stage} recorded no outputs"
        # recorded hashes still match the files on disk
        pipeline._verify_outputs(paths, m)
    config_blob = open(paths.config).read()
    sha = hashlib.sha256(config_blob.encode()).hexdigest()
    for stage in pipeline.STAGES:
        assert _read_json(paths.manifest(stage))["config_sha256"] == sha


def test_config_snapshot_is_canonical(micro_run):
    paths = Paths(micro_run["out"])
    assert open(paths.config).read() == canonical_json(micro_run["config"].to_dict())


def test_corpus_artifacts(micro_run):
    paths = Paths(micro_run["out"])
    rows = pipeline.load_jsonl(paths.corpus_manifest)
    assert len(rows) == 4
    for row in rows:
        assert set(row) == {"id", "bucket", "transcript", "wav_path", "speech_fraction"}
        assert row["bucket"] == "short"
        assert os.path.exists(os.path.join(paths.out, row["wav_path"]))
        assert row["speech_fraction"] > 0.5
    items = load_corpus(paths)
    assert [it.id for it in items] == [r["id"] for r in rows]
    training = load_corpus(paths, training=True)
    # 10 synthesized items plus the 3 fixed full-alphabet sentences
    assert len(training) == 13
    assert sum(1 for it in training if it.id.startswith("coverage-")) == 3
    chars = set("".join(it.transcript for it in training))
    assert set("abcdefghijklmnopqrstuvwxyz ") <= chars


def test_train_artifacts(micro_run):
    paths = Paths(micro_run["out"])
    model = load_recognizer(paths.recognizer_ckpt)
    assert model.trained
    net = load_denoiser(paths.denoiser_ckpt)
    assert net.schedule.T == micro_run["config"].schedule.n_steps
    report = _read_json(paths.train_report)
    assert set(report) == {"recognizer", "predictor", "gates"}
    assert all(g["passed"] for g in report["gates"].values())
    assert set(report["gates"]) == {
        "recognizer_cer",
        "predictor_loss_improvement",
        "predictor_fresh_mse",
        "purified_cer",
    }


def test_attack_artifacts(micro_run):
    paths = Paths(micro_run["out"])
    items = load_corpus(paths)
    for it in items:
        sidecar = _read_json(paths.attack_sidecar(it.id))
        assert sidecar["id"] == it.id
        assert set(sidecar) == {
            "id", "bucket", "target", "succeeded", "final_tau", "iterations_used",
            "distortion_db", "transcript", "ctc_loss", "objective", "diagnostic", "seed",
        }
        assert os.path.exists(paths.attack_wav(it.id))
    report = _read_json(paths.attack_report_json)
    assert 0.0 <= report["success_rate_pct"] <= 100.0
    assert report["items"] == len(items)
    assert [r["bucket"] for r in report["per_bucket"]] == ["short", "all"]
    attacked = load_attacked(paths, items)
    assert [a.id for a in attacked] == [it.id for it in items]


def test_attack_runtime_table(micro_run):
    paths = Paths(micro_run["out"])
    rows = _read_json(paths.runtime_json)["per_bucket"]
    assert [r["bucket"] for r in rows] == ["short", "all"]
    for r in rows:
        assert r["items"] > 0
        assert r["mean_seconds"] > 0.0
        assert r["total_seconds"] >= r["mean_seconds"]
    with open(paths.runtime_csv) as fh:
        header = fh.readline().strip()
    assert header == "bucket,items,mean_seconds,total_seconds"


def test_defense_report(micro_run):
    paths = Paths(micro_run["out"])
    report = _read_json(paths.defense_report_json)
    assert report["n_values"] == [0, 1, 2]
    assert report["runs"] == 2
    # depth x (bucket short, all) x 3 metric rows
    assert len(report["rows"]) == 3 * 2 * 3
    got = {(r["n_star"], r["condition"], r["bucket"], r["metric"]) for r in report["rows"]}
    for n in (0, 1, 2):
        for b in ("short", "all"):
            assert (n, "clean", b, "asr_performance") in got
            assert (n, "attacked", b, "asr_performance") in got
            assert (n, "attacked", b, "attack_success") in got
    s = report["summary"]
    assert set(s) == {
        "zero_success_depths", "clean_performance_n0", "clean_performance_nmax",
        "n_max", "clean_degradation_non_increasing",
    }
    with open(paths.defense_report_csv) as fh:
        header = fh.readline().strip()
    assert header == "n_star,condition,bucket,metric,mean,ci_low,ci_high,runs"


def test_detection_report(micro_run):
    paths = Paths(micro_run["out"])
    report = _read_json(paths.detection_report_json)
    fitted = report["fitted"]
    assert fitted["n_star"] in (1, 2)
    assert 0.0 <= fitted["omega"] <= 1.0
    assert len(fitted["candidate_scores"]) == 2
    # 4 items -> 8 labelled examples, split half calibration half test
    assert report["split"] == {"calibration": 4, "test": 4}
    assert len(report["records"]) == 4
    assert set(report["threshold_sensitivity"]) == {"-0.02", "-0.01", "+0.00", "+0.01", "+0.02"}
    assert set(report["test"]) == {"overall", "per_bucket"}
    with open(paths.detection_report_csv) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "bucket,examples,tn,fn,fp,tp,accuracy,tpr,fpr,auroc"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["short", "all"]
    # auroc column is fixed to two decimals
    for ln in lines[1:]:
        auroc_field = ln.split(",")[-1]
        assert len(auroc_field.split(".")[1]) == 2


def test_summary_aggregates(micro_run):
    paths = Paths(micro_run["out"])
    summary = _read_json(paths.summary_json)
    assert set(summary) == {"seed", "corpus", "train", "attack", "defend", "detect"}
    assert summary["seed"] == micro_run["config"].seed
    assert summary["corpus"]["items"] == 4
    assert summary["train"]["gates_passed"] is True
    with open(paths.summary_csv) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "key,value"
    keys = [ln.split(",")[0] for ln in lines[1:]]
    assert "attack.success_rate_pct" in keys
    assert "detect.fitted.n_star" in keys


def test_defended_system_loads(micro_run):
    paths = Paths(micro_run["out"])
    cfg = micro_run["config"]
    system = load_defended_system(cfg, paths)
    items = load_corpus(paths)
    import numpy as np

    from purewave.defense import ss

    hyp = ss(items[0].waveform, 0, system, np.random.default_rng(0))
    assert hyp == system.model.recognize(items[0].waveform)


# ------------------------------------------------------------- error paths


def test_stage_order_enforced(tmp_path):
    cfg = load_config(overrides=MICRO_OVERRIDES)
    with pytest.raises(PipelineError, match="purewave corpus"):
        stage_train(cfg, str(tmp_path / "empty"))


def test_config_drift_rejected(tmp_path):
    out = str(tmp_path / "run")
    cfg = load_config(overrides=MICRO_OVERRIDES)
    stage_corpus(cfg, out)
    other = load_config(overrides=MICRO_OVERRIDES, seed=999)
    with pytest.raises(PipelineError, match="config drift"):
        stage_corpus(other, out)


def test_artifact_corruption_detected(tmp_path):
    out = str(tmp_path / "run")
    cfg = load_config(overrides=MICRO_OVERRIDES)
    stage_corpus(cfg, out)
    paths = Paths(out)
    victim = paths.corpus_wav(load_corpus(paths)[0].id)
    with open(victim, "ab") as fh:
        fh.write(b"\x00")
    with pytest.raises(PipelineError, match="changed since stage"):
        stage_train(cfg, out)


def test_missing_artifact_detected(tmp_path):
    out = str(tmp_path / "run")
    cfg = load_config(overrides=MICRO_OVERRIDES)
    stage_corpus(cfg, out)
    paths = Paths(out)
    os.remove(paths.corpus_wav(load_corpus(paths)[0].id))
    with pytest.raises(PipelineError, match="is missing"):
        stage_train(cfg, out)


def test_train_resume(micro_run, tmp_path):
    paths = Paths(micro_run["out"])
    before = sha256_file(paths.recognizer_ckpt)
    outcome = stage_train(micro_run["config"], micro_run["out"], resume=True)
    assert outcome["resumed"] is True
    assert sha256_file(paths.recognizer_ckpt) == before
    # resume without checkpoints is refused
    out = str(tmp_path / "run")
    cfg = load_config(overrides=MICRO_OVERRIDES)
    stage_corpus(cfg, out)
    with pytest.raises(PipelineError, match="resume"):
        stage_train(cfg, out, resume=True)


def test_failed_gate_still_writes_artifacts_and_attack_checks_targets(tmp_path):
    out = str(tmp_path / "run")
    # deliberately undertrained models plus a target table missing 'short'
    cfg = load_config(overrides=[
        'corpus.counts={"short": 2, "medium": 0, "long": 0}',
        'corpus.training_counts={"short": 2, "medium": 0, "long": 0}',
        "recognizer.epochs=2",
        "predictor.steps=10",
        'attack.targets={"medium": "switch off internet connection"}',
        "seed=5",
    ])
    stage_corpus(cfg, out)
    with pytest.raises(TrainingGateError, match="gates failed"):
        stage_train(cfg, out)
    paths = Paths(out)
    # the failure still leaves checkpoints, the report, and the manifest behind
    assert os.path.exists(paths.recognizer_ckpt)
    assert os.path.exists(paths.denoiser_ckpt)
    assert os.path.exists(paths.train_report)
    assert not _read_json(paths.train_report)["gates"]["recognizer_cer"]["passed"]
    assert os.path.exists(paths.manifest("train"))
    with pytest.raises(PipelineError, match="short"):
        stage_attack(cfg, out)
