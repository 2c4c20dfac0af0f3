"""Positional-encoding schemes: Sinusoidal, Rotary/xPOS, ALiBi and T5 bias.

Sinusoidal injects position once, into the input embeddings. The other three
act inside every self-attention block: Rotary/xPOS rotate queries and keys,
ALiBi and T5 add a per-head bias to the attention scores.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import Tensor, rotate_pairs, take, transpose


class ConfigError(ValueError):
    """Invalid model or scheme configuration."""


class Kind(str, enum.Enum):
    SINUSOIDAL = "sinusoidal"
    XPOS = "xpos"
    ALIBI = "alibi"
    T5 = "t5"


class Mode(str, enum.Enum):
    CAUSAL = "causal"
    BIDIRECTIONAL = "bidirectional"


@dataclass(frozen=True)
class PositionalScheme:
    kind: Kind
    d_model: int = 512
    n_heads: int = 8
    rotary_theta_base: float = 10000.0
    t5_num_buckets: int = 32
    t5_max_distance: int = 128
    xpos_gamma: float = 0.4
    # exponent divisor for the xPOS decay; keeps zeta**pos finite at long lengths
    xpos_scale_base: float = 512.0
    cross_attention_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.SINUSOIDAL and self.d_model % 2:
            raise ConfigError(f"posenc.d_model must be even for sinusoidal, got {self.d_model}")
        if self.kind is Kind.XPOS and self.xpos_gamma <= 0:
            raise ConfigError(f"posenc.xpos_gamma must be > 0, got {self.xpos_gamma}")
        if self.kind is Kind.T5:
            if self.t5_num_buckets < 4:
                raise ConfigError("posenc.t5_num_buckets must be >= 4")
            if self.t5_max_distance <= self.t5_num_buckets // 2:
                raise ConfigError("posenc.t5_max_distance must exceed t5_num_buckets / 2")

    @property
    def injects_at_input(self) -> bool:
        return self.kind is Kind.SINUSOIDAL

    @property
    def injects_per_block(self) -> bool:
        return not self.injects_at_input

    @property
    def is_relative(self) -> bool:
        return self.kind is not Kind.SINUSOIDAL

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PositionalScheme":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown posenc keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- sinusoidal


def sinusoidal_table(max_len: int, d_model: int) -> np.ndarray:
    """[max_len, d_model] table: sin on even dims, cos on odd dims."""
    if d_model % 2:
        raise ConfigError(f"sinusoidal table needs an even d_model, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d_model)
    table = np.empty((max_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


# ---------------------------------------------------------------- rotary / xPOS


def rotary_frequencies(head_dim: int, theta_base: float = 10000.0) -> np.ndarray:
    if head_dim % 2:
        raise ConfigError(f"rotary needs an even head_dim, got {head_dim}")
    return theta_base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)


def xpos_zeta(head_dim: int, gamma: float = 0.4) -> np.ndarray:
    """Per-pair decay base ((2i/head_dim) + gamma) / (1 + gamma), all in (0, 1)."""
    if gamma <= 0:
        raise ConfigError(f"xpos gamma must be > 0, got {gamma}")
    return (np.arange(0, head_dim, 2, dtype=np.float64) / head_dim + gamma) / (1.0 + gamma)


def rotary_coefficients(positions, head_dim: int, theta_base: float = 10000.0,
                        scale_exponent_sign: int = 0, gamma: float = 0.4,
                        scale_base: float = 512.0) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin arrays of shape [len(positions), head_dim // 2].

    With ``scale_exponent_sign`` = +1 (queries) or -1 (keys) the coefficients
    carry the xPOS scale zeta**(+-pos / scale_base).
    """
    pos = np.asarray(positions, dtype=np.float64)
    if (pos < 0).any():
        raise ValueError("rotary positions must be non-negative")
    angle = pos[:, None] * rotary_frequencies(head_dim, theta_base)[None, :]
    cos, sin = np.cos(angle), np.sin(angle)
    if scale_exponent_sign:
        scale = xpos_zeta(head_dim, gamma)[None, :] ** (scale_exponent_sign * pos[:, None] / scale_base)
        cos, sin = cos * scale, sin * scale
    return cos, sin


def rotary_apply(qk: Tensor, positions, theta_base: float = 10000.0) -> Tensor:
    """Rotate [..., len, head_dim] queries or keys by position (no decay)."""
    cos, sin = rotary_coefficients(positions, qk.shape[-1], theta_base)
    dt = qk.data.dtype
    return rotate_pairs(qk, cos.astype(dt), sin.astype(dt))


def xpos_apply(qk: Tensor, positions, is_query: bool, gamma: float = 0.4,
               theta_base: float = 10000.0, scale_base: float = 512.0) -> Tensor:
    """Rotary rotation times zeta**(pos/scale_base) for queries, zeta**(-pos/scale_base) for keys."""
    if gamma <= 0:
        raise ConfigError(f"xpos gamma must be > 0, got {gamma}")
    cos, sin = rotary_coefficients(positions, qk.shape[-1], theta_base,
                                   1 if is_query else -1, gamma, scale_base)
    dt = qk.data.dtype
    return rotate_pairs(qk, cos.astype(dt), sin.astype(dt))


def xpos_envelope(distance: int, head_dim: int, gamma: float = 0.4, scale_base: float = 1.0) -> float:
    """Scalar decay prod_i zeta_i**(distance/scale_base) applied to a q.k pair."""
    return float(np.prod(xpos_zeta(head_dim, gamma) ** (distance / scale_base)))


# ---------------------------------------------------------------- ALiBi


def alibi_slopes(n_heads: int) -> list[float]:
    """Geometric series starting at 2**(-8/n_heads) with the same ratio."""
    if n_heads < 1:
        raise ConfigError(f"alibi needs n_heads >= 1, got {n_heads}")
    ratio = 2.0 ** (-8.0 / n_heads)
    return [ratio ** (h + 1) for h in range(n_heads)]


def relative_positions(len_q: int, len_k: int, q_offset: int = 0, k_offset: int = 0) -> np.ndarray:
    """[len_q, len_k] grid of j - i."""
    i = np.arange(len_q)[:, None] + q_offset
    j = np.arange(len_k)[None, :] + k_offset
    return j - i


def alibi_bias(len_q: int, len_k: int, n_heads: int, mode: Mode | str = Mode.CAUSAL,
               q_offset: int = 0, k_offset: int = 0) -> np.ndarray:
    """[n_heads, len_q, len_k] static bias.

    Causal entries with j > i are set to 0 here; the causal mask removes them.
    """
    mode = Mode(mode)
    rel = relative_positions(len_q, len_k, q_offset, k_offset).astype(np.float64)
    slopes = np.asarray(alibi_slopes(n_heads))[:, None, None]
    if mode is Mode.BIDIRECTIONAL:
        return -slopes * np.abs(rel)[None]
    return slopes * np.minimum(rel, 0.0)[None]


# ---------------------------------------------------------------- T5 relative bias


def t5_bucket(relative_position, bidirectional: bool = True, num_buckets: int = 32,
              max_distance: int = 128):
    """Map relative position (j - i) to a bucket id, T5 style.

    Half the buckets are exact small distances, the rest grow logarithmically
    up to ``max_distance``; every distance >= max_distance shares the last
    bucket of its direction. Works elementwise on ints or arrays.
    """
    rp = np.asarray(relative_position, dtype=np.int64)
    buckets = np.zeros_like(rp)
    n = num_buckets
    if bidirectional:
        n //= 2
        buckets = buckets + (rp > 0) * n
        dist = np.abs(rp)
    else:
        dist = -np.minimum(rp, 0)
    max_exact = n // 2
    is_small = dist < max_exact
    with np.errstate(divide="ignore"):
        large = max_exact + (
            np.log(np.maximum(dist, 1) / max_exact) / math.log(max_distance / max_exact) * (n - max_exact)
        ).astype(np.int64)
    large = np.minimum(large, n - 1)
    buckets = buckets + np.where(is_small, dist, large)
    return int(buckets) if buckets.ndim == 0 else buckets


def t5_bucket_grid(len_q: int, len_k: int, mode: Mode | str, num_buckets: int = 32,
                   max_distance: int = 128, q_offset: int = 0, k_offset: int = 0) -> np.ndarray:
    rel = relative_positions(len_q, len_k, q_offset, k_offset)
    return t5_bucket(rel, Mode(mode) is Mode.BIDIRECTIONAL, num_buckets, max_distance)


def t5_bias(len_q: int, len_k: int, bias_table: Tensor, mode: Mode | str = Mode.BIDIRECTIONAL,
            max_distance: int = 128, q_offset: int = 0, k_offset: int = 0) -> Tensor:
    """[n_heads, len_q, len_k] bias gathered from a learned [num_buckets, n_heads] table."""
    grid = t5_bucket_grid(len_q, len_k, mode, bias_table.shape[0], max_distance, q_offset, k_offset)
    return transpose(take(bias_table, grid), (2, 0, 1))


def attention_bias(scheme: PositionalScheme, len_q: int, len_k: int, n_heads: int, mode: Mode | str,
                   bias_table: Tensor | None = None, q_offset: int = 0, k_offset: int = 0):
    """Score bias for a relative scheme, or None when the scheme adds none.

    Returns a float array (ALiBi) or a Tensor (T5, differentiable).
    """
    if scheme.kind is Kind.ALIBI:
        return alibi_bias(len_q, len_k, n_heads, mode, q_offset, k_offset)
    if scheme.kind is Kind.T5:
        if bias_table is None:
            raise ConfigError("t5 scheme requires a bias table")
        return t5_bias(len_q, len_k, bias_table, mode, scheme.t5_max_distance, q_offset, k_offset)
    return None


def attention_scores(scheme: PositionalScheme, x: np.ndarray, w_q: np.ndarray, w_k: np.ndarray, n_heads: int,
                     mode: Mode | str = Mode.CAUSAL, offset: int = 0,
                     bias_table: np.ndarray | None = None) -> np.ndarray:
    """Pre-softmax self-attention scores [n_heads, L, L] for content ``x`` [L, d] at positions offset..offset+L-1.

    Applies the scheme exactly as a self-attention block would: sinusoidal
    adds the table to the input, Rotary/xPOS rotate the projected heads,
    ALiBi and T5 add their bias. Used to probe translation invariance.
    """
    mode = Mode(mode)
    x = np.asarray(x, dtype=np.float64)
    L, d = x.shape
    if scheme.kind is Kind.SINUSOIDAL:
        x = x + sinusoidal_table(offset + L, d)[offset:]
    hd = w_q.shape[1] // n_heads
    q = (x @ w_q).reshape(L, n_heads, hd).transpose(1, 0, 2)
    k = (x @ w_k).reshape(L, n_heads, hd).transpose(1, 0, 2)
    pos = np.arange(L) + offset
    if scheme.kind is Kind.XPOS:
        if mode is Mode.CAUSAL:
            cq, sq = rotary_coefficients(pos, hd, scheme.rotary_theta_base, 1, scheme.xpos_gamma, scheme.xpos_scale_base)
            ck, sk = rotary_coefficients(pos, hd, scheme.rotary_theta_base, -1, scheme.xpos_gamma, scheme.xpos_scale_base)
        else:
            cq, sq = ck, sk = rotary_coefficients(pos, hd, scheme.rotary_theta_base)
        q = rotate_pairs(Tensor(q, dtype=np.float64), cq, sq).data
        k = rotate_pairs(Tensor(k, dtype=np.float64), ck, sk).data
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(hd)
    if scheme.kind is Kind.ALIBI:
        scores = scores + alibi_bias(L, L, n_heads, mode, offset, offset)
    elif scheme.kind is Kind.T5:
        if bias_table is None:
            raise ConfigError("t5 scheme requires a bias table")
        grid = t5_bucket_grid(L, L, mode, bias_table.shape[0], scheme.t5_max_distance, offset, offset)
        scores = scores + np.asarray(bias_table, dtype=np.float64)[grid].transpose(2, 0, 1)
    return scores
