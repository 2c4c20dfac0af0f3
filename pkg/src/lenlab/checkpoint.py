"""Model checkpoints: named-tensor weights plus JSON metadata."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorio
from .model import Model, ModelConfig
from .tensor import Tensor

WEIGHTS = "weights.bin"
OPTIM = "optim.bin"
META = "meta.json"


@dataclass
class ModelCheckpoint:
    state: dict[str, np.ndarray]
    config: ModelConfig
    step: int = 0
    epoch: int = 0
    valid_loss: float | None = None
    tokenizer_hash: str | None = None
    experiment: dict = field(default_factory=dict)
    optimizer: dict[str, np.ndarray] | None = None
    trainer_state: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Model, **kw) -> "ModelCheckpoint":
        return cls({k: v.copy() for k, v in model.state_dict().items()}, model.config, **kw)

    def to_model(self) -> Model:
        params = {k: Tensor(v.copy(), requires_grad=True, name=k, dtype=v.dtype) for k, v in self.state.items()}
        return Model(self.config, params)

    def meta(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "scheme": self.config.scheme.to_dict(),
            "tokenizer_hash": self.tokenizer_hash,
            "step": self.step,
            "epoch": self.epoch,
            "valid_loss": self.valid_loss,
            "experiment": self.experiment,
            "trainer_state": self.trainer_state,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        tensorio.save(path / WEIGHTS, self.state)
        if self.optimizer is not None:
            tensorio.save(path / OPTIM, self.optimizer)
        (path / META).write_text(json.dumps(self.meta(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ModelCheckpoint":
        path = Path(path)
        meta = json.loads((path / META).read_text())
        optim = tensorio.load(path / OPTIM) if (path / OPTIM).exists() else None
        return cls(
            state=tensorio.load(path / WEIGHTS),
            config=ModelConfig.from_dict(meta["config"]),
            step=meta["step"],
            epoch=meta["epoch"],
            valid_loss=meta["valid_loss"],
            tokenizer_hash=meta["tokenizer_hash"],
            experiment=meta.get("experiment", {}),
            optimizer=optim,
            trainer_state=meta.get("trainer_state", {}),
        )
