"""Encoder-decoder transformer with a pluggable positional scheme.

Blocks are post-norm: sublayer -> residual add -> layer norm. The token
embedding is shared by encoder and decoder; the output projection is a
separate matrix unless ``tie_output`` is set.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .posenc import (
    ConfigError,
    Kind,
    Mode,
    PositionalScheme,
    alibi_bias,
    rotary_apply,
    sinusoidal_table,
    t5_bias,
    xpos_apply,
)
from .tensor import Tensor

PAD_ID = 0
EOS_ID = 1
NUM_SPECIAL = 5  # PAD, EOS, MASK, NEW_LINE, TAB; see tokenizer.SPECIALS


class LengthError(ValueError):
    """Input longer than the configured maximum; never truncated silently."""


@dataclass
class ModelConfig:
    vocab_size: int
    scheme: PositionalScheme
    d_model: int = 512
    enc_layers: int = 6
    enc_heads: int = 8
    dec_layers: int = 8
    dec_heads: int = 6
    enc_max_len: int = 1024
    dec_max_len: int = 128
    head_dim: int = 64
    ffn_mult: int = 4
    dropout: float = 0.0
    tie_output: bool = False

    def __post_init__(self):
        if isinstance(self.scheme, dict):
            self.scheme = PositionalScheme.from_dict(self.scheme)
        elif isinstance(self.scheme, (str, Kind)):
            self.scheme = PositionalScheme(Kind(self.scheme))
        self.scheme = replace(self.scheme, d_model=self.d_model, n_heads=self.enc_heads)
        if self.vocab_size <= NUM_SPECIAL:
            raise ConfigError(f"model.vocab_size must exceed the {NUM_SPECIAL} special tokens, "
                              f"got {self.vocab_size}")
        if self.scheme.kind is Kind.XPOS and self.head_dim % 2:
            raise ConfigError(f"model.head_dim must be even for rotary schemes, got {self.head_dim}")
        for key in ("d_model", "enc_layers", "enc_heads", "dec_layers", "dec_heads",
                    "enc_max_len", "dec_max_len", "head_dim", "ffn_mult"):
            if getattr(self, key) < 1:
                raise ConfigError(f"model.{key} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EncodedInput:
    Z: Tensor            # [batch, src_len, d_model]
    mask: np.ndarray     # [batch, src_len], True on real tokens


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Model:
    """Parameters plus the forward pass. Build with :func:`build_model`."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        n = max(config.enc_max_len, config.dec_max_len)
        self._sin_table = sinusoidal_table(n, config.d_model) if config.scheme.kind is Kind.SINUSOIDAL else None
        self.dropout_rng: np.random.Generator | None = None

    # ------------------------------------------------------------ utilities

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Iterable[tuple[str, Tensor]]:
        return self.params.items()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "Model":
        """Copy with every parameter cast to ``dtype`` (64-bit shadow mode)."""
        params = {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, name=k, dtype=dtype)
                  for k, v in self.params.items()}
        return Model(self.config, params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: expected shape {list(p.shape)}, got {list(state[k].shape)}")
            p.data = np.array(state[k], dtype=p.data.dtype)

    # ------------------------------------------------------------ blocks

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _embed(self, tokens: np.ndarray) -> Tensor:
        cfg = self.config
        x = T.take(self._p("embed.weight"), tokens) * math.sqrt(cfg.d_model)
        if self._sin_table is not None:
            pe = self._sin_table[: tokens.shape[1]].astype(x.dtype)
            x = x + Tensor(pe[None], dtype=x.dtype)
        return self._dropout(x)

    def _dropout(self, x: Tensor) -> Tensor:
        if self.config.dropout > 0 and self.dropout_rng is not None and T.is_grad_enabled():
            return T.dropout(x, self.config.dropout, self.dropout_rng)
        return x

    def _norm(self, x: Tensor, prefix: str) -> Tensor:
        return T.layer_norm(x, self._p(prefix + ".gain"), self._p(prefix + ".bias"))

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        h = T.gelu(T.linear(x, self._p(prefix + ".in.weight"), self._p(prefix + ".in.bias")))
        return T.linear(h, self._p(prefix + ".out.weight"), self._p(prefix + ".out.bias"))

    def _attention(self, prefix: str, x_q: Tensor, x_kv: Tensor, n_heads: int, *,
                   bias=None, mask: np.ndarray | None = None, rope=None) -> Tensor:
        cfg = self.config
        B, Lq, _ = x_q.shape
        Lk = x_kv.shape[1]
        hd = cfg.head_dim

        def heads(x, name, L):
            y = T.linear(x, self._p(f"{prefix}.{name}.weight"), self._p(f"{prefix}.{name}.bias"))
            return T.transpose(T.reshape(y, (B, L, n_heads, hd)), (0, 2, 1, 3))

        q, k, v = heads(x_q, "q", Lq), heads(x_kv, "k", Lk), heads(x_kv, "v", Lk)
        if rope is not None:
            q, k = rope(q, k)
        scores = T.matmul(q, T.transpose(k)) * (1.0 / math.sqrt(hd))
        if bias is not None and not isinstance(bias, Tensor):
            bias = Tensor(bias.astype(scores.dtype), dtype=scores.dtype)
        w = T.softmax_lastdim(scores, bias, mask)
        out = T.reshape(T.transpose(T.matmul(w, v), (0, 2, 1, 3)), (B, Lq, n_heads * hd))
        return T.linear(out, self._p(f"{prefix}.o.weight"), self._p(f"{prefix}.o.bias"))

    def _self_position(self, L: int, n_heads: int, mode: Mode, table: str):
        """(bias, rope) for self-attention over positions 0..L-1."""
        sc = self.config.scheme
        if sc.kind is Kind.ALIBI:
            return alibi_bias(L, L, n_heads, mode), None
        if sc.kind is Kind.T5:
            return t5_bias(L, L, self._p(table), mode, sc.t5_max_distance), None
        if sc.kind is Kind.XPOS:
            pos = np.arange(L)
            if mode is Mode.BIDIRECTIONAL:
                return None, lambda q, k: (rotary_apply(q, pos, sc.rotary_theta_base),
                                           rotary_apply(k, pos, sc.rotary_theta_base))
            return None, lambda q, k: (
                xpos_apply(q, pos, True, sc.xpos_gamma, sc.rotary_theta_base, sc.xpos_scale_base),
                xpos_apply(k, pos, False, sc.xpos_gamma, sc.rotary_theta_base, sc.xpos_scale_base))
        return None, None

    def _cross_position(self, Lq: int, Lk: int, n_heads: int):
        sc = self.config.scheme
        if not sc.cross_attention_bias:
            return None, None
        if sc.kind is Kind.ALIBI:
            return alibi_bias(Lq, Lk, n_heads, Mode.BIDIRECTIONAL), None
        if sc.kind is Kind.T5:
            return t5_bias(Lq, Lk, self._p("dec.cross_t5_bias"), Mode.BIDIRECTIONAL, sc.t5_max_distance), None
        if sc.kind is Kind.XPOS:
            pq, pk = np.arange(Lq), np.arange(Lk)
            return None, lambda q, k: (rotary_apply(q, pq, sc.rotary_theta_base),
                                       rotary_apply(k, pk, sc.rotary_theta_base))
        return None, None

    # ------------------------------------------------------------ forward

    def encode(self, src: np.ndarray) -> EncodedInput:
        """Encode a [batch, src_len] id array (PAD marks padding)."""
        cfg = self.config
        src = np.atleast_2d(np.asarray(src, dtype=np.int64))
        if src.shape[1] > cfg.enc_max_len:
            raise LengthError(f"source length {src.shape[1]} exceeds enc_max_len {cfg.enc_max_len}")
        real = src != PAD_ID
        key_mask = real[:, None, None, :]
        x = self._embed(src)
        bias, rope = self._self_position(src.shape[1], cfg.enc_heads, Mode.BIDIRECTIONAL, "enc.t5_bias")
        for layer in range(cfg.enc_layers):
            p = f"enc.{layer}"
            a = self._attention(p + ".attn", x, x, cfg.enc_heads, bias=bias, mask=key_mask, rope=rope)
            x = self._norm(x + self._dropout(a), p + ".ln1")
            x = self._norm(x + self._dropout(self._ffn(x, p + ".ffn")), p + ".ln2")
        return EncodedInput(x, real)

    def decode_logits(self, encoded: EncodedInput, tgt_in: np.ndarray) -> Tensor:
        """Teacher-forced logits [batch, tgt_len, vocab] for decoder inputs ``tgt_in``."""
        cfg = self.config
        tgt_in = np.atleast_2d(np.asarray(tgt_in, dtype=np.int64))
        L = tgt_in.shape[1]
        if L > cfg.dec_max_len:
            raise LengthError(f"target length {L} exceeds dec_max_len {cfg.dec_max_len}")
        causal = np.tril(np.ones((L, L), dtype=bool))[None, None]
        enc_mask = encoded.mask[:, None, None, :]
        x = self._embed(tgt_in)
        bias, rope = self._self_position(L, cfg.dec_heads, Mode.CAUSAL, "dec.t5_bias")
        xbias, xrope = self._cross_position(L, encoded.Z.shape[1], cfg.dec_heads)
        for layer in range(cfg.dec_layers):
            p = f"dec.{layer}"
            a = self._attention(p + ".self", x, x, cfg.dec_heads, bias=bias, mask=causal, rope=rope)
            x = self._norm(x + self._dropout(a), p + ".ln1")
            c = self._attention(p + ".cross", x, encoded.Z, cfg.dec_heads, bias=xbias, mask=enc_mask, rope=xrope)
            x = self._norm(x + self._dropout(c), p + ".ln2")
            x = self._norm(x + self._dropout(self._ffn(x, p + ".ffn")), p + ".ln3")
        if cfg.tie_output:
            w = T.transpose(self._p("embed.weight"), (1, 0))
            return T.linear(x, w, self._p("out.bias"))
        return T.linear(x, self._p("out.weight"), self._p("out.bias"))


# ---------------------------------------------------------------- construction


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[tuple[int, ...], int]]:
    """Ordered name -> (shape, fan_in) for every parameter of ``config``."""
    D, V, hd = config.d_model, config.vocab_size, config.head_dim
    F = config.ffn_mult * D
    shapes: dict[str, tuple[tuple[int, ...], int]] = {"embed.weight": ((V, D), D)}

    def attn(prefix, heads):
        inner = heads * hd
        for name in ("q", "k", "v"):
            shapes[f"{prefix}.{name}.weight"] = ((D, inner), D)
            shapes[f"{prefix}.{name}.bias"] = ((inner,), D)
        shapes[f"{prefix}.o.weight"] = ((inner, D), inner)
        shapes[f"{prefix}.o.bias"] = ((D,), inner)

    def norm(prefix):
        shapes[prefix + ".gain"] = ((D,), 0)
        shapes[prefix + ".bias"] = ((D,), 0)

    def ffn(prefix):
        shapes[prefix + ".in.weight"] = ((D, F), D)
        shapes[prefix + ".in.bias"] = ((F,), D)
        shapes[prefix + ".out.weight"] = ((F, D), F)
        shapes[prefix + ".out.bias"] = ((D,), F)

    for layer in range(config.enc_layers):
        p = f"enc.{layer}"
        attn(p + ".attn", config.enc_heads)
        norm(p + ".ln1")
        ffn(p + ".ffn")
        norm(p + ".ln2")
    for layer in range(config.dec_layers):
        p = f"dec.{layer}"
        attn(p + ".self", config.dec_heads)
        norm(p + ".ln1")
        attn(p + ".cross", config.dec_heads)
        norm(p + ".ln2")
        ffn(p + ".ffn")
        norm(p + ".ln3")
    if not config.tie_output:
        shapes["out.weight"] = ((D, V), D)
    shapes["out.bias"] = ((V,), D)
    sc = config.scheme
    if sc.kind is Kind.T5:
        nb = sc.t5_num_buckets
        shapes["enc.t5_bias"] = ((nb, config.enc_heads), nb)
        shapes["dec.t5_bias"] = ((nb, config.dec_heads), nb)
        if sc.cross_attention_bias:
            shapes["dec.cross_t5_bias"] = ((nb, config.dec_heads), nb)
    return shapes


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Initialise parameters deterministically from ``seed``.

    Weights are uniform(+-1/sqrt(fan_in)); layer-norm gains are 1 and biases 0.
    """
    rng = np.random.default_rng(seed)
    dtype = T.default_dtype()
    params = {}
    for name, (shape, fan_in) in parameter_shapes(config).items():
        if name.endswith(".gain"):
            arr = np.ones(shape)
        elif fan_in == 0:
            arr = np.zeros(shape)
        else:
            arr = _uniform(rng, shape, fan_in)
        params[name] = Tensor(arr, requires_grad=True, name=name, dtype=dtype)
    return Model(config, params)


# ---------------------------------------------------------------- batching helpers


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = PAD_ID, left: bool = False) -> np.ndarray:
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), max(width, 1)), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        if len(s):
            if left:
                out[i, width - len(s):] = s
            else:
                out[i, : len(s)] = s
    return out


def teacher_forcing(targets: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Decoder inputs (PAD start token + shifted target) and padded outputs."""
    tgt_out = pad_batch(targets)
    tgt_in = np.full_like(tgt_out, PAD_ID)
    tgt_in[:, 1:] = tgt_out[:, :-1]
    return tgt_in, tgt_out


# ---------------------------------------------------------------- functional API


def encode(model: Model, src_tokens: Sequence[int]) -> EncodedInput:
    return model.encode(np.asarray([list(src_tokens)], dtype=np.int64))


def decode_logits(model: Model, encoded: EncodedInput, tgt_prefix: Sequence[int]) -> Tensor:
    """Logits for each prefix position; row t depends on tgt_prefix[:t+1] and Z only."""
    return T.reshape(model.decode_logits(encoded, np.asarray([list(tgt_prefix)])),
                     (len(tgt_prefix), model.config.vocab_size))


def loss(model: Model, batch: Sequence[tuple[Sequence[int], Sequence[int]]]) -> Tensor:
    """Mean token cross-entropy over non-pad target positions (teacher forcing)."""
    if not batch:
        raise ValueError("loss: empty batch")
    for _, tgt in batch:
        if not len(tgt) or tgt[-1] != EOS_ID:
            raise ValueError("loss: every target must end with EOS")
    src = pad_batch([s for s, _ in batch])
    tgt_in, tgt_out = teacher_forcing([t for _, t in batch])
    logits = model.decode_logits(model.encode(src), tgt_in)
    return T.cross_entropy(logits, tgt_out, ignore_index=PAD_ID)
