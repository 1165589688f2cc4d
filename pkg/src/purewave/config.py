"""Experiment configuration: typed sections, JSON files, dotted overrides.

Defaults describe the desk-scale experiment that the CLI runs end to end.
A config file (JSON, same nesting) overrides defaults; `--set a.b.c=value`
overrides individual leaves on top of that.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

DEFAULT_TARGETS = {
    "short": "open all doors",
    "medium": "switch off internet connection",
    "long": "i need a reservation for sixteen people at the seafood restaurant down the street",
}


@dataclass(frozen=True)
class CorpusSection:
    counts: dict = field(default_factory=lambda: {"short": 20, "medium": 15, "long": 15})
    training_counts: dict = field(default_factory=lambda: {"short": 16, "medium": 12, "long": 10})
    training_snr_db: float = 22.0
    training_snr_jitter_db: float = 6.0


@dataclass(frozen=True)
class RecognizerSection:
    hidden: int = 128
    epochs: int = 250
    lr: float = 4e-3
    stop_cer: float = 0.005


@dataclass(frozen=True)
class PredictorSection:
    steps: int = 4000
    lr: float = 1e-3
    crop_len: int = 1600
    channels: int = 8
    emb_dim: int = 16
    dilations: list = field(default_factory=lambda: [1, 2, 4, 8])


@dataclass(frozen=True)
class ScheduleSection:
    n_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(frozen=True)
class GatesSection:
    max_train_cer: float = 0.05
    purified_check_depth: int = 2
    max_purified_cer: float = 0.2
    min_loss_improvement: float = 0.9  # final loss must be below this times initial
    max_fresh_mse: float = 1.2  # predictor MSE on held-out noisings


@dataclass(frozen=True)
class AttackSection:
    c: float = 10.0
    learning_rate: float = 3e-3
    max_iterations: int = 1500
    tau_initial: float | None = None  # None means unconstrained until first success
    tau_decrement: float = 1.0
    inner_success_patience: int = 300
    optimizer: str = "adam"
    targets: dict = field(default_factory=lambda: dict(DEFAULT_TARGETS))


@dataclass(frozen=True)
class DefendSection:
    n_values: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    runs: int = 10
    ci_level: float = 0.95


@dataclass(frozen=True)
class DetectSection:
    fit_fraction: float = 0.1
    n_candidates: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    omega_step: float = 0.01
    reference_n_star: int = 2
    reference_omega: float = 0.57


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20240
    sample_rate: int = 16000
    corpus: CorpusSection = field(default_factory=CorpusSection)
    recognizer: RecognizerSection = field(default_factory=RecognizerSection)
    predictor: PredictorSection = field(default_factory=PredictorSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    gates: GatesSection = field(default_factory=GatesSection)
    attack: AttackSection = field(default_factory=AttackSection)
    defend: DefendSection = field(default_factory=DefendSection)
    detect: DetectSection = field(default_factory=DetectSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _from_dict(cls, data: dict, path: str = ""):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        loc = path or cls.__name__
        raise ValueError(f"unknown config keys in {loc}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTION_TYPES.get(name)
        if sub is not None and isinstance(value, dict):
            kwargs[name] = _from_dict(sub, value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "corpus": CorpusSection,
    "recognizer": RecognizerSection,
    "predictor": PredictorSection,
    "schedule": ScheduleSection,
    "gates": GatesSection,
    "attack": AttackSection,
    "defend": DefendSection,
    "detect": DetectSection,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, data)


def apply_overrides(data: dict, overrides) -> dict:
    """Apply `a.b.c=value` strings onto a nested config dict (values parse as JSON,
    falling back to plain strings)."""
    out = json.loads(json.dumps(data))  # deep copy of plain structures
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key.path=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ValueError(f"override {item!r}: no config section {p!r}")
            node = node[p]
        leaf = parts[-1]
        if leaf not in node:
            raise ValueError(f"override {item!r}: no config key {leaf!r}")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw
    return out


def load_config(path: str | None = None, overrides=None, seed: int | None = None) -> ExperimentConfig:
    data = ExperimentConfig().to_dict()
    if path is not None:
        with open(path) as fh:
            file_data = json.load(fh)
        data = _merge(data, file_data)
    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    return config_from_dict(data)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out
