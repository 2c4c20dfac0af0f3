"""Marker-copy toy task for length-generalization runs.

A source is a random symbol sequence in which one span of ``span`` symbols
is delimited by an opening marker and a closing marker; the target is that
span. Solving it needs content lookup (find the markers) plus relative
position (the slots between them), so it exercises the positional scheme
without any real corpus. The closing marker matters: a symmetric
bidirectional bias cannot tell left from right on its own, and the second
delimiter makes the side of the span identifiable from content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EOS_ID, NUM_SPECIAL

MASK_ID = 2   # opening marker
CLOSE_ID = 3  # closing marker
BUCKET_LENGTHS = {"short": (8, 16), "medium": (17, 32), "long": (33, 64)}
BUCKETS = tuple(BUCKET_LENGTHS)


@dataclass(frozen=True)
class SymbolCodec:
    """Word-level codec: symbol i <-> token id NUM_SPECIAL + i <-> text ``s{i:02d}``."""

    n_symbols: int = 32

    @property
    def vocab_size(self) -> int:
        return NUM_SPECIAL + self.n_symbols

    def decode(self, ids) -> str:
        words = []
        for t in ids:
            t = int(t)
            if t == MASK_ID:
                words.append("<MASK>")
            elif t == CLOSE_ID:
                words.append("<END>")
            elif t >= NUM_SPECIAL:
                words.append(f"s{t - NUM_SPECIAL:02d}")
        return " ".join(words)

    def encode(self, text: str) -> list[int]:
        out = []
        for w in text.split():
            if w == "<MASK>":
                out.append(MASK_ID)
            elif w == "<END>":
                out.append(CLOSE_ID)
            else:
                out.append(NUM_SPECIAL + int(w[1:]))
        return out


@dataclass(frozen=True)
class ToyInstance:
    src: tuple[int, ...]
    tgt: tuple[int, ...]   # span ids followed by EOS
    bucket: str
    instance_id: int


def make_instance(rng: np.random.Generator, length: int, codec: SymbolCodec, span: int,
                  bucket: str, instance_id: int) -> ToyInstance:
    """``length`` counts source tokens including both markers."""
    body = rng.integers(NUM_SPECIAL, codec.vocab_size, size=length - 2)
    pos = int(rng.integers(0, length - 1 - span))
    src = np.concatenate([body[:pos], [MASK_ID], body[pos: pos + span], [CLOSE_ID], body[pos + span:]])
    tgt = tuple(int(t) for t in body[pos: pos + span]) + (EOS_ID,)
    return ToyInstance(tuple(int(t) for t in src), tgt, bucket, instance_id)


def make_bucket(bucket: str, n: int, seed: int, split: str, codec: SymbolCodec | None = None,
                span: int = 4) -> list[ToyInstance]:
    codec = codec or SymbolCodec()
    lo, hi = BUCKET_LENGTHS[bucket]
    rng = np.random.default_rng([seed, BUCKETS.index(bucket), ("train", "valid", "test").index(split)])
    lengths = rng.integers(lo, hi + 1, size=n)
    return [make_instance(rng, int(L), codec, span, bucket, i) for i, L in enumerate(lengths)]


def make_mix(n: int, seed: int, split: str, codec: SymbolCodec | None = None, span: int = 4) -> list[ToyInstance]:
    """Equal thirds from each length bucket (the first ``n % 3`` buckets get one more)."""
    per = [n // 3 + (i < n % 3) for i in range(3)]
    out: list[ToyInstance] = []
    for b, k in zip(BUCKETS, per):
        out.extend(make_bucket(b, k, seed + 7919, split, codec, span))
    return [ToyInstance(x.src, x.tgt, "mix", i) for i, x in enumerate(out)]
