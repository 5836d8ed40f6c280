"""Experiment configuration: one JSON file, flag > file > default.

The config bundles the benchmark spec, model architecture, the two
training phases (original fit, unlearning fine-tune), sculpting and
pruning hyperparameters, and output paths.  ``SMFA_HOME`` overrides the
default artifact root.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import BenchSpec, VocabLayout, layout_for
from .errors import ConfigError, IoError
from .methods import ManuConfig, TrainConfig
from .model.network import ModelConfig
from .sculptor import SculptConfig

DEFAULT_HOME = "smfa_home"


@dataclass(frozen=True)
class ModelArch:
    embed_dim: int = 32
    hidden_dim: int = 256
    hidden_layers: int = 3
    answer_len: int = 4
    max_question_len: int = 10

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "hidden_layers", "answer_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass(frozen=True)
class TrainTargets:
    memory_exact: float = 0.95
    understanding_exact: float = 0.80


def default_home() -> Path:
    return Path(os.environ.get("SMFA_HOME", DEFAULT_HOME))


@dataclass(frozen=True)
class Paths:
    data: str = ""
    checkpoints: str = ""
    reports: str = ""

    def resolved(self) -> "Paths":
        home = default_home()
        return Paths(
            data=self.data or str(home / "data"),
            checkpoints=self.checkpoints or str(home / "checkpoints"),
            reports=self.reports or str(home / "reports"),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    bench: BenchSpec = field(default_factory=BenchSpec)
    arch: ModelArch = field(default_factory=ModelArch)
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            epochs=400, batch_size=64, learning_rate=3e-3, optimizer="adam",
            grad_clip_norm=5.0, seed=1,
        )
    )
    train_targets: TrainTargets = field(default_factory=TrainTargets)
    unlearn_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            epochs=150, batch_size=32, learning_rate=1e-3, optimizer="adam",
            grad_clip_norm=1.0, seed=1,
        )
    )
    sculpt: SculptConfig = field(default_factory=SculptConfig)
    manu: ManuConfig = field(default_factory=ManuConfig)
    paths: Paths = field(default_factory=Paths)

    def model_config(self, layout: VocabLayout | None = None) -> ModelConfig:
        layout = layout or layout_for(self.bench)
        text_question_len = 3 + 4 + 1  # marker + 2 keys, doubled name pair, filler
        return ModelConfig(
            feature_dim=self.bench.feature_dim,
            question_vocab=layout.question_vocab,
            answer_vocab=layout.answer_vocab,
            embed_dim=self.arch.embed_dim,
            hidden_dim=self.arch.hidden_dim,
            hidden_layers=self.arch.hidden_layers,
            answer_len=self.arch.answer_len,
            max_question_len=max(self.arch.max_question_len, text_question_len),
        )

    def to_dict(self) -> dict:
        return {
            "bench": self.bench.to_dict(),
            "arch": {
                "embed_dim": self.arch.embed_dim,
                "hidden_dim": self.arch.hidden_dim,
                "hidden_layers": self.arch.hidden_layers,
                "answer_len": self.arch.answer_len,
                "max_question_len": self.arch.max_question_len,
            },
            "train": _train_to_dict(self.train),
            "train_targets": {
                "memory_exact": self.train_targets.memory_exact,
                "understanding_exact": self.train_targets.understanding_exact,
            },
            "unlearn_train": _train_to_dict(self.unlearn_train),
            "sculpt": {
                "k": self.sculpt.k,
                "epsilon": self.sculpt.epsilon,
                "rho_scope": self.sculpt.rho_scope,
            },
            "manu": {
                "alpha": self.manu.alpha,
                "tau": self.manu.tau,
                "epsilon": self.manu.epsilon,
            },
            "paths": {
                "data": self.paths.data,
                "checkpoints": self.paths.checkpoints,
                "reports": self.paths.reports,
            },
        }


def _train_to_dict(cfg: TrainConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "optimizer": cfg.optimizer,
        "grad_clip_norm": cfg.grad_clip_norm,
        "seed": cfg.seed,
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    defaults = ExperimentConfig().to_dict()
    merged = _merge(defaults, data)
    try:
        return ExperimentConfig(
            bench=BenchSpec.from_dict(merged["bench"]),
            arch=ModelArch(**merged["arch"]),
            train=TrainConfig(**merged["train"]),
            train_targets=TrainTargets(**merged["train_targets"]),
            unlearn_train=TrainConfig(**merged["unlearn_train"]),
            sculpt=SculptConfig(**merged["sculpt"]),
            manu=ManuConfig(**merged["manu"]),
            paths=Paths(**merged["paths"]),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config file and apply override values on top."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if overrides:
        data = _merge_overrides(data, overrides)
    return config_from_dict(data)


def _merge_overrides(data: dict, overrides: dict) -> dict:
    out = dict(data)
    for key, value in overrides.items():
        if isinstance(value, dict):
            out[key] = _merge_overrides(dict(out.get(key) or {}), value)
        else:
            out[key] = value
    return out
