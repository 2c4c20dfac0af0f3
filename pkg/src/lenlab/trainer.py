"""Adam with linear warmup and cosine decay; per-epoch validation checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import ModelCheckpoint
from .model import Model, loss as model_loss
from .posenc import ConfigError

log = logging.getLogger(__name__)

Example = tuple[Sequence[int], Sequence[int]]


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or gradient)."""


@dataclass
class TrainConfig:
    lr_peak: float = 1e-4
    batch_size: int = 256
    warmup_steps: int = 2000
    max_epochs: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    grad_clip: float | None = None
    total_steps: int | None = None  # derived from the data when left unset

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)

    def with_total_steps(self, n_train: int) -> "TrainConfig":
        steps = self.max_epochs * math.ceil(n_train / self.batch_size)
        return TrainConfig(**{**asdict(self), "total_steps": steps})


def lr_at_step(step: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to lr_peak, then cosine decay to 0 at total_steps."""
    if step < 0:
        raise ValueError("step must be non-negative")
    total, warm = config.total_steps, config.warmup_steps
    if total is None or total <= warm:
        raise ConfigError(f"train.total_steps ({total}) must exceed warmup_steps ({warm})")
    if step < warm:
        return config.lr_peak * step / warm
    progress = min(step - warm, total - warm) / (total - warm)
    return config.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, step: int, tensors: dict[str, np.ndarray]) -> "AdamState":
        st = cls(step)
        for k, a in tensors.items():
            kind, name = k.split(".", 1)
            (st.m if kind == "m" else st.v)[name] = a
        return st


def adam_update(model: Model, state: AdamState, lr: float, config: TrainConfig) -> None:
    """One bias-corrected Adam step from the accumulated ``.grad`` buffers."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    grads = {k: p.grad for k, p in model.named_parameters() if p.grad is not None}
    if config.grad_clip:
        norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
        if norm > config.grad_clip:
            grads = {k: g * (config.grad_clip / norm) for k, g in grads.items()}
    for name, p in model.named_parameters():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + config.eps)).astype(p.data.dtype)


def train_step(model: Model, batch: Sequence[Example], state: AdamState, config: TrainConfig,
               lr: float | None = None, batch_ids: Sequence[int] | None = None) -> float:
    """Forward, backward and one Adam update; gradients are cleared afterwards."""
    if not batch:
        raise ValueError("train_step: empty batch")
    if lr is None:
        lr = lr_at_step(state.step, config)
    try:
        loss = model_loss(model, batch)
        T.backward(loss)
    except T.NonFiniteError as exc:
        T.current_tape().clear()
        model.zero_grad()
        raise TrainingError(f"non-finite value at step {state.step} (lr={lr:.3g}, "
                            f"batch ids={list(batch_ids or [])[:16]}): {exc}") from exc
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss at step {state.step} (lr={lr:.3g})")
    adam_update(model, state, lr, config)
    model.zero_grad()
    return value


def evaluate_loss(model: Model, data: Sequence[Example], batch_size: int = 64) -> float:
    """Token-weighted mean cross-entropy over ``data`` (no gradient)."""
    total, count = 0.0, 0
    with T.no_grad():
        for i in range(0, len(data), batch_size):
            chunk = data[i: i + batch_size]
            n = sum(len(t) for _, t in chunk)
            total += model_loss(model, chunk).item() * n
            count += n
    return total / max(count, 1)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


@dataclass
class FitResult:
    best: ModelCheckpoint
    history: list[dict]
    last: ModelCheckpoint


def fit(model: Model, train_set: Sequence[Example], valid_set: Sequence[Example], config: TrainConfig,
        out_dir: str | Path | None = None, resume: ModelCheckpoint | None = None,
        metadata: dict | None = None, max_epochs: int | None = None,
        on_epoch: Callable[[int, float], None] | None = None) -> FitResult:
    """Train for ``config.max_epochs`` epochs, keeping the lowest-validation-loss weights.

    ``resume`` continues from a checkpoint written by a previous call; the
    shuffle is keyed by (seed, epoch) so resumed runs see the same batches.
    ``max_epochs`` stops early (used to simulate an interrupted run).
    """
    if not valid_set:
        raise ConfigError("fit: validation set is empty")
    if not train_set:
        raise ConfigError("fit: training set is empty")
    if config.total_steps is None:
        config = config.with_total_steps(len(train_set))
    metadata = dict(metadata or {})
    state = AdamState()
    history: list[dict] = []
    best: ModelCheckpoint | None = None
    start_epoch = 0
    if resume is not None:
        model.load_state_dict(resume.state)
        state = AdamState.from_tensors(resume.trainer_state["adam_step"], resume.optimizer or {})
        history = list(resume.trainer_state.get("history", []))
        start_epoch = resume.epoch
        if resume.trainer_state.get("best_path"):
            best = ModelCheckpoint.load(resume.trainer_state["best_path"])
    out = Path(out_dir) if out_dir else None
    stop = config.max_epochs if max_epochs is None else min(max_epochs, config.max_epochs)
    last = None
    for epoch in range(start_epoch, stop):
        order = epoch_order(len(train_set), config.seed, epoch)
        for i in range(0, len(order), config.batch_size):
            ids = order[i: i + config.batch_size]
            lr = lr_at_step(state.step, config)
            value = train_step(model, [train_set[j] for j in ids], state, config, lr, ids)
            history.append({"step": state.step, "epoch": epoch, "lr": lr,
                            "train_loss": value, "valid_loss": None})
        vloss = evaluate_loss(model, valid_set)
        history[-1]["valid_loss"] = vloss
        log.info("epoch %d step %d valid_loss %.4f", epoch, state.step, vloss)
        if on_epoch is not None:
            on_epoch(epoch, vloss)
        if best is None or best.valid_loss is None or vloss < best.valid_loss:
            best = ModelCheckpoint.from_model(model, step=state.step, epoch=epoch + 1, valid_loss=vloss,
                                              tokenizer_hash=metadata.get("tokenizer_hash"),
                                              experiment=metadata)
            if out:
                best.save(out / "best")
        last = ModelCheckpoint.from_model(
            model, step=state.step, epoch=epoch + 1, valid_loss=vloss,
            tokenizer_hash=metadata.get("tokenizer_hash"), experiment=metadata,
            optimizer=state.to_tensors(),
            trainer_state={"adam_step": state.step, "history": history,
                           "best_path": str(out / "best") if out else None})
        if out:
            last.save(out / "last")
            write_history(out / "history.csv", history)
    if best is None:
        raise ConfigError("fit: no epochs were run")
    if last is None:
        last = resume
    return FitResult(best, history, last)


def write_history(path: str | Path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "epoch", "lr", "train_loss", "valid_loss"])
        for h in history:
            w.writerow([h["step"], h["epoch"], repr(h["lr"]), repr(h["train_loss"]),
                        "" if h["valid_loss"] is None else repr(h["valid_loss"])])
