"""Autoregressive decoding: nucleus (top-p) sampling or greedy argmax."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .model import EOS_ID, PAD_ID, Model, pad_batch
from .posenc import ConfigError


class DecodeMode(str, enum.Enum):
    NUCLEUS = "nucleus"
    GREEDY = "greedy"


@dataclass
class GenConfig:
    top_p: float = 0.95
    max_new_tokens: int = 128
    mode: DecodeMode = DecodeMode.NUCLEUS
    seed: int = 0

    def __post_init__(self):
        self.mode = DecodeMode(self.mode)
        if not 0 < self.top_p <= 1:
            raise ConfigError(f"gen.top_p must be in (0, 1], got {self.top_p}")
        if self.max_new_tokens < 1:
            raise ConfigError("gen.max_new_tokens must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown gen keys: {sorted(unknown)}")
        return cls(**d)


def nucleus_filter(probs, top_p: float) -> np.ndarray:
    """Keep the smallest high-probability prefix with mass >= top_p, renormalised.

    Tokens are ranked by probability, ties broken by lower token id.
    """
    p = np.asarray(probs, dtype=np.float64)
    if top_p >= 1.0:
        return p / p.sum()
    order = np.lexsort((np.arange(p.size), -p))
    cum = np.cumsum(p[order])
    # first index where cumulative mass reaches top_p (small slack for rounding)
    cut = int(np.searchsorted(cum, top_p - 1e-12)) + 1
    keep = order[: min(cut, p.size)]
    out = np.zeros_like(p)
    out[keep] = p[keep]
    return out / out.sum()


def instance_rng(seed: int, instance_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, instance_id])


def _next_token(logits: np.ndarray, config: GenConfig, rng: np.random.Generator | None) -> int:
    if config.mode is DecodeMode.GREEDY:
        return int(np.argmax(logits))
    z = logits.astype(np.float64)
    z = np.exp(z - z.max())
    probs = nucleus_filter(z / z.sum(), config.top_p)
    return int(rng.choice(probs.size, p=probs))


def generate_batch(model: Model, sources: Sequence[Sequence[int]], config: GenConfig,
                   instance_ids: Sequence[int] | None = None) -> list[list[int]]:
    """Decode each source independently; EOS ends a sequence and is not returned.

    Each instance samples from its own RNG stream keyed by (seed, instance id),
    so results do not depend on batch composition or order.
    """
    if not sources:
        return []
    ids = list(range(len(sources))) if instance_ids is None else list(instance_ids)
    rngs = [instance_rng(config.seed, i) for i in ids]
    limit = min(config.max_new_tokens, model.config.dec_max_len)
    outs: list[list[int]] = [[] for _ in sources]
    done = [False] * len(sources)
    with T.no_grad():
        enc = model.encode(pad_batch(sources))
        prefix = np.full((len(sources), 1), PAD_ID, dtype=np.int64)
        for _ in range(limit):
            logits = model.decode_logits(enc, prefix).data[:, -1, :]
            step = np.full(len(sources), PAD_ID, dtype=np.int64)
            for b in range(len(sources)):
                if done[b]:
                    continue
                tok = _next_token(logits[b], config, rngs[b])
                if tok == EOS_ID:
                    done[b] = True
                else:
                    outs[b].append(tok)
                    step[b] = tok
            if all(done):
                break
            prefix = np.concatenate([prefix, step[:, None]], axis=1)
            if prefix.shape[1] > model.config.dec_max_len:
                break
    return outs


def generate(model: Model, src_tokens: Sequence[int], config: GenConfig, instance_id: int = 0) -> list[int]:
    return generate_batch(model, [src_tokens], config, [instance_id])[0]


def write_predictions(path: str | Path, records: Iterable[dict]) -> None:
    """JSON Lines of {"instance_id", "prediction", "target", "bucket"}."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({k: r[k] for k in ("instance_id", "prediction", "target", "bucket")}) + "\n")


def read_predictions(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
