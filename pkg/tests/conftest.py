"""Shared fixtures.

desk_run builds the full default-config experiment once and caches it under
.cache/ keyed by (resolved config, package source) so repeated test sessions
skip the expensive stages. Set PUREWAVE_TEST_CACHE=0 to force a rebuild.
The tiny_* fixtures train throwaway small models for unit tests.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil

import numpy as np
import pytest

from purewave import pipeline
from purewave.config import load_config
from purewave.denoiser import PredictorTrainConfig, train_predictor
from purewave.diffusion import linear_schedule
from purewave.recognizer import RecognizerTrainConfig, train_recognizer
from purewave.synth import CorpusConfig, SynthesisConfig, build_corpus

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
CACHE_ROOT = os.path.join(REPO_ROOT, ".cache")

# small, fast configuration exercising every stage; used by pipeline and CLI
# tests where artifact structure matters and model quality does not
MICRO_OVERRIDES = [
    'corpus.counts={"short": 4, "medium": 0, "long": 0}',
    'corpus.training_counts={"short": 10, "medium": 0, "long": 0}',
    "recognizer.hidden=96",
    "recognizer.epochs=150",
    "recognizer.lr=0.006",
    "recognizer.stop_cer=0.01",
    "predictor.steps=1000",
    "predictor.lr=0.002",
    "gates.max_purified_cer=0.5",
    "attack.max_iterations=600",
    "attack.inner_success_patience=200",
    "defend.n_values=[1, 2]",
    "defend.runs=2",
    "detect.fit_fraction=0.5",
    "detect.n_candidates=[1, 2]",
    "detect.omega_step=0.05",
    "seed=123",
]


def _source_fingerprint() -> str:
    src = os.path.join(REPO_ROOT, "src", "purewave")
    h = hashlib.sha256()
    for name in sorted(os.listdir(src)):
        if name.endswith(".py"):
            h.update(name.encode())
            with open(os.path.join(src, name), "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


@pytest.fixture(scope="session")
def desk_run():
    """Full pipeline run with the default config; cached across sessions."""
    return _cached_run("desk", load_config())


def _cached_run(prefix: str, cfg) -> dict:
    key_material = json.dumps(cfg.to_dict(), sort_keys=True) + _source_fingerprint()
    key = hashlib.sha256(key_material.encode()).hexdigest()[:16]
    out = os.path.join(CACHE_ROOT, f"{prefix}-{key}")
    done_marker = os.path.join(out, "DONE")
    if os.environ.get("PUREWAVE_TEST_CACHE", "1") != "0" and os.path.exists(done_marker):
        return {"out": out, "config": cfg}
    if os.path.exists(CACHE_ROOT):
        for stale in os.listdir(CACHE_ROOT):
            if stale.startswith(f"{prefix}-"):
                shutil.rmtree(os.path.join(CACHE_ROOT, stale), ignore_errors=True)
    for stage in pipeline.STAGES:
        pipeline.STAGE_FUNCS[stage](cfg, out)
    with open(done_marker, "w") as fh:
        fh.write("ok\n")
    return {"out": out, "config": cfg}


@pytest.fixture(scope="session")
def micro_run():
    """Cheap full-pipeline run (seconds, not minutes); cached across sessions."""
    cfg = load_config(overrides=MICRO_OVERRIDES)
    return {**_cached_run("micro", cfg), "overrides": MICRO_OVERRIDES}


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = CorpusConfig(synthesis=SynthesisConfig(noise_snr_db=25.0))
    return build_corpus({"short": 6}, 424242, cfg)


@pytest.fixture(scope="session")
def tiny_model(tiny_corpus):
    """Small recognizer good enough for attack and detection unit tests."""
    model = train_recognizer(
        tiny_corpus,
        cfg=RecognizerTrainConfig(hidden=64, epochs=200, lr=6e-3, stop_cer=0.0),
        rng=np.random.default_rng(7),
    )
    assert model.train_report.final_cer < 0.05, "tiny fixture recognizer failed to converge"
    return model


@pytest.fixture(scope="session")
def tiny_predictor(tiny_corpus):
    schedule = linear_schedule()
    net = train_predictor(
        [it.waveform for it in tiny_corpus],
        schedule,
        PredictorTrainConfig(steps=800, lr=2e-3, crop_len=1600),
        rng=np.random.default_rng(8),
    )
    return net
