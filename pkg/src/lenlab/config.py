"""Experiment configuration: one JSON document plus command-line overrides.

A config names the task (``code`` completion over a function corpus, or the
synthetic ``toy`` span-copy task), the positional scheme, the training
bucket and partial overrides for the model, trainer and generator configs.
Named profiles supply defaults underneath the overrides; ``resolve`` merges
them so the stored config is complete and self-describing.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .generator import GenConfig
from .model import ModelConfig
from .posenc import ConfigError, Kind
from .trainer import TrainConfig

DATA_DIR_ENV = "LENLAB_DATA_DIR"
DEFAULT_DATA_DIR = "lenlab-data"
TASKS = ("code", "toy")
LANGUAGES = ("java", "python")
TRAIN_BUCKETS = ("short", "medium", "long", "mix")
SCHEMES = tuple(k.value for k in Kind)

CODE_DATA_KEYS = {"vocab_size", "strip_all_comments", "joint_tokenizer"}
TOY_DATA_KEYS = {"n_symbols", "span", "n_train", "n_valid", "n_test"}

# Profile defaults per task. "full" holds the full-size hyperparameters;
# "desk" shrinks data, model and schedule so a matrix fits on one CPU.
PROFILES: dict[str, dict[str, dict[str, Any]]] = {
    "full": {
        "code": {
            "scale": 1.0,
            "model": {"d_model": 512, "enc_layers": 6, "enc_heads": 8, "dec_layers": 8, "dec_heads": 6,
                      "enc_max_len": 1024, "dec_max_len": 128, "head_dim": 64, "ffn_mult": 4},
            "train": {"lr_peak": 1e-4, "batch_size": 256, "warmup_steps": 2000, "max_epochs": 5},
            "gen": {"mode": "nucleus", "top_p": 0.95, "max_new_tokens": 128},
            "data": {"vocab_size": 50000, "strip_all_comments": True, "joint_tokenizer": False},
        },
        "toy": {
            "scale": 1.0,
            "model": {"d_model": 128, "enc_layers": 3, "enc_heads": 4, "dec_layers": 3, "dec_heads": 4,
                      "enc_max_len": 128, "dec_max_len": 16, "head_dim": 32, "ffn_mult": 4},
            "train": {"lr_peak": 1e-3, "batch_size": 64, "warmup_steps": 500, "max_epochs": 5},
            "gen": {"mode": "greedy", "max_new_tokens": 8},
            "data": {"n_symbols": 32, "span": 4, "n_train": 64000, "n_valid": 512, "n_test": 500},
        },
    },
    "desk": {
        "code": {
            "scale": 0.01,
            "model": {"d_model": 128, "enc_layers": 2, "enc_heads": 4, "dec_layers": 2, "dec_heads": 4,
                      "enc_max_len": 512, "dec_max_len": 64, "head_dim": 32, "ffn_mult": 4},
            "train": {"lr_peak": 5e-4, "batch_size": 32, "warmup_steps": 200, "max_epochs": 5},
            "gen": {"mode": "nucleus", "top_p": 0.95, "max_new_tokens": 64},
            "data": {"vocab_size": 2000, "strip_all_comments": True, "joint_tokenizer": False},
        },
        "toy": {
            "scale": 1.0,
            "model": {"d_model": 64, "enc_layers": 2, "enc_heads": 4, "dec_layers": 2, "dec_heads": 4,
                      "enc_max_len": 128, "dec_max_len": 16, "head_dim": 16, "ffn_mult": 2},
            "train": {"lr_peak": 2e-3, "batch_size": 32, "warmup_steps": 200, "max_epochs": 1},
            "gen": {"mode": "greedy", "max_new_tokens": 8},
            "data": {"n_symbols": 32, "span": 4, "n_train": 64000, "n_valid": 256, "n_test": 200},
        },
    },
}

# keys that choose which cells run or where artifacts go, not how a cell is trained
_SELECTION_KEYS = ("schemes", "train_buckets", "paths")
_CELL_KEYS = ("scheme", "bucket", *_SELECTION_KEYS)


def _canonical_hash(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    task: str = "code"
    language: str = "java"
    profile: str = "full"
    scheme: str = "alibi"
    bucket: str = "short"
    schemes: list[str] = field(default_factory=lambda: list(SCHEMES))
    train_buckets: list[str] = field(default_factory=lambda: list(TRAIN_BUCKETS))
    seed: int = 0
    scale: float | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    gen: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------ validation

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "code" and self.language not in LANGUAGES:
            raise ConfigError(f"language must be one of {LANGUAGES}, got {self.language!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {tuple(PROFILES)}, got {self.profile!r}")
        for name in [self.scheme, *self.schemes]:
            if name not in SCHEMES:
                raise ConfigError(f"scheme must be one of {SCHEMES}, got {name!r}")
        for name in [self.bucket, *self.train_buckets]:
            if name not in TRAIN_BUCKETS:
                raise ConfigError(f"bucket must be one of {TRAIN_BUCKETS}, got {name!r}")
        if self.scale is not None and not 0 < self.scale <= 1:
            raise ConfigError(f"scale must lie in (0, 1], got {self.scale}")
        _check_keys("model", self.model, set(f.name for f in fields(ModelConfig)) - {"vocab_size", "scheme"})
        _check_keys("train", self.train, set(f.name for f in fields(TrainConfig)))
        _check_keys("gen", self.gen, set(f.name for f in fields(GenConfig)))
        _check_keys("data", self.data, CODE_DATA_KEYS if self.task == "code" else TOY_DATA_KEYS)
        _check_keys("paths", self.paths, {"data_dir", "corpus", "corpora"})

    # ------------------------------------------------------------ (de)serialization

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**copy.deepcopy(d))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    # ------------------------------------------------------------ derived views

    def resolve(self) -> "ExperimentConfig":
        """Merge profile defaults under the explicit settings."""
        base = PROFILES[self.profile][self.task]
        d = self.to_dict()
        for key in ("model", "train", "gen", "data"):
            d[key] = {**base[key], **d[key]}
        if d["scale"] is None:
            d["scale"] = base["scale"]
        return ExperimentConfig.from_dict(d)

    def override(self, assignments: list[str]) -> "ExperimentConfig":
        """Apply ``section.key=value`` (or ``key=value``) overrides; values parse as JSON when possible."""
        d = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.split(".")
            if len(parts) == 1:
                d[parts[0]] = value
            elif len(parts) == 2 and isinstance(d.get(parts[0]), dict):
                d[parts[0]][parts[1]] = value
            else:
                raise ConfigError(f"unknown config key: {key}")
        return ExperimentConfig.from_dict(d)

    def for_cell(self, scheme: str, bucket: str) -> "ExperimentConfig":
        d = self.to_dict()
        d["scheme"], d["bucket"] = scheme, bucket
        return ExperimentConfig.from_dict(d)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig.from_dict({**self.resolve().model, "vocab_size": vocab_size, "scheme": self.scheme})

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.resolve().train, "seed": self.seed})

    def gen_config(self) -> GenConfig:
        return GenConfig.from_dict({"seed": self.seed, **self.resolve().gen})

    def config_hash(self) -> str:
        """Hash of everything that influences a single cell's artifacts."""
        d = self.resolve().to_dict()
        for key in _SELECTION_KEYS:
            d.pop(key)
        return _canonical_hash(d)

    def matrix_hash(self) -> str:
        """Hash shared by every cell of one generalization matrix."""
        d = self.resolve().to_dict()
        for key in _CELL_KEYS:
            d.pop(key)
        return _canonical_hash(d)

    def data_dir(self) -> Path:
        """Artifact root: explicit ``paths.data_dir``, else $LENLAB_DATA_DIR, else ./lenlab-data."""
        return Path(self.paths.get("data_dir") or os.environ.get(DATA_DIR_ENV) or DEFAULT_DATA_DIR)

    @property
    def dataset_name(self) -> str:
        return "toy" if self.task == "toy" else self.language


def _check_keys(section: str, d: dict, allowed: set[str]) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{section} must be an object, got {type(d).__name__}")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(section + '.' + k for k in unknown)}")
