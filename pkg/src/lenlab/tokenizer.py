"""Byte-level BPE with atomic special tokens.

Id layout: the five specials first (so PAD=0, EOS=1 line up with the model),
then the 256 byte tokens in byte order, then one id per learned merge.
Text is split on specials, then pre-tokenised with a regex; merges never
cross a pre-token boundary, so the same pre-token always encodes the same way.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from .posenc import ConfigError

PAD, EOS, MASK, NEW_LINE, TAB = "⟨PAD⟩", "⟨EOS⟩", "⟨MASK⟩", "⟨NEW_LINE⟩", "⟨TAB⟩"
SPECIALS = (PAD, EOS, MASK, NEW_LINE, TAB)
VERSION = 1

PRETOKEN = re.compile(r"""'(?:s|t|re|ve|m|ll|d)| ?[A-Za-z_]+| ?[0-9]+| ?[^\sA-Za-z_0-9]+|\s+(?!\S)|\s+""")


@lru_cache(maxsize=1)
def bytes_to_unicode() -> dict[int, str]:
    """Reversible byte -> printable character map (the usual byte-level BPE table)."""
    keep = list(range(ord("!"), ord("~") + 1)) + list(range(0xA1, 0xAD)) + list(range(0xAE, 0x100))
    chars = keep[:]
    n = 0
    for b in range(256):
        if b not in keep:
            keep.append(b)
            chars.append(256 + n)
            n += 1
    return dict(zip(keep, map(chr, chars)))


def pretokenize(text: str) -> list[str]:
    return PRETOKEN.findall(text)


def _split_specials(text: str, specials: Sequence[str]) -> list[tuple[bool, str]]:
    if not specials:
        return [(False, text)] if text else []
    pattern = "(" + "|".join(re.escape(s) for s in sorted(specials, key=len, reverse=True)) + ")"
    out = []
    for i, piece in enumerate(re.split(pattern, text)):
        if piece:
            out.append((i % 2 == 1, piece))
    return out


def _word_symbols(pretoken: str) -> tuple[str, ...]:
    table = bytes_to_unicode()
    return tuple(table[b] for b in pretoken.encode("utf-8"))


@dataclass
class Vocab:
    merges: list[tuple[str, str]]
    specials: tuple[str, ...] = SPECIALS
    version: int = VERSION
    tokens: list[str] = field(init=False, repr=False)
    ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self.specials = tuple(self.specials)
        base = [bytes_to_unicode()[b] for b in range(256)]
        self.tokens = list(self.specials) + base + [a + b for a, b in self.merges]
        self.ids = {}
        for i, t in enumerate(self.tokens):
            self.ids.setdefault(t, i)
        self._ranks = {m: r for r, m in enumerate(self.merges)}
        self._byte_of = {c: b for b, c in bytes_to_unicode().items()}
        self._cache: dict[str, tuple[int, ...]] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def content_hash(self) -> str:
        payload = json.dumps({"merges": [list(m) for m in self.merges], "specials": list(self.specials),
                              "version": self.version}, sort_keys=True, ensure_ascii=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def special_id(self, name: str) -> int:
        return self.specials.index(name)

    # ------------------------------------------------------------ encode / decode

    def _bpe(self, pretoken: str) -> tuple[int, ...]:
        hit = self._cache.get(pretoken)
        if hit is not None:
            return hit
        word = list(_word_symbols(pretoken))
        while len(word) > 1:
            best, best_rank = None, None
            for i in range(len(word) - 1):
                r = self._ranks.get((word[i], word[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = i, r
            if best is None:
                break
            a, b = word[best], word[best + 1]
            merged, i = [], 0
            while i < len(word):
                if i < len(word) - 1 and word[i] == a and word[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(word[i])
                    i += 1
            word = merged
        n_special = len(self.specials)
        out = tuple(self.ids[s] if len(s) > 1 else n_special + self._byte_of[s] for s in word)
        self._cache[pretoken] = out
        return out

    def encode(self, text: str) -> list[int]:
        out: list[int] = []
        for is_special, piece in _split_specials(text, self.specials):
            if is_special:
                out.append(self.specials.index(piece))
            else:
                for pt in pretokenize(piece):
                    out.extend(self._bpe(pt))
        return out

    def decode(self, ids: Iterable[int]) -> str:
        parts: list[str] = []
        buf = bytearray()
        n_special = len(self.specials)
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise KeyError(f"unknown token id {i}")
            if i < n_special:
                if buf:
                    parts.append(buf.decode("utf-8", errors="replace"))
                    buf = bytearray()
                parts.append(self.specials[i])
            else:
                buf.extend(self._byte_of[c] for c in self.tokens[i])
        if buf:
            parts.append(buf.decode("utf-8", errors="replace"))
        return "".join(parts)

    # ------------------------------------------------------------ persistence

    def to_dict(self) -> dict:
        return {"version": self.version, "specials": list(self.specials),
                "merges": [list(m) for m in self.merges], "content_hash": self.content_hash}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        v = cls(d["merges"], d["specials"], d["version"])
        if d.get("content_hash") not in (None, v.content_hash):
            raise ValueError(f"{path}: content hash mismatch (file edited or corrupted)")
        return v


def train_bpe(corpus: Iterable[str], vocab_size: int, specials: Sequence[str] = SPECIALS) -> Vocab:
    """Greedy most-frequent-pair merges until ``vocab_size`` or no pair repeats.

    Frequency ties go to the lexicographically smallest pair.
    """
    specials = tuple(specials)
    if vocab_size < 256 + len(specials):
        raise ConfigError(f"tokenizer.vocab_size must be >= {256 + len(specials)} "
                          f"(256 bytes + {len(specials)} specials), got {vocab_size}")
    counts: Counter[str] = Counter()
    seen_any = False
    for text in corpus:
        seen_any = True
        for is_special, piece in _split_specials(text, specials):
            if not is_special:
                counts.update(pretokenize(piece))
    if not seen_any:
        raise ValueError("train_bpe: empty corpus")

    words = [list(_word_symbols(w)) for w in counts]
    freqs = list(counts.values())
    pair_counts: defaultdict[tuple[str, str], int] = defaultdict(int)
    where: defaultdict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, (w, f) in enumerate(zip(words, freqs)):
        for pair in zip(w, w[1:]):
            pair_counts[pair] += f
            where[pair].add(wi)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    budget = vocab_size - 256 - len(specials)
    while len(merges) < budget and heap:
        negc, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -negc:
            continue  # stale entry
        if -negc < 2:
            break
        merges.append(pair)
        a, b = pair
        touched: set[tuple[str, str]] = set()
        for wi in sorted(where.pop(pair, ())):
            w, f = words[wi], freqs[wi]
            for p in zip(w, w[1:]):
                pair_counts[p] -= f
                touched.add(p)
            merged, i = [], 0
            while i < len(w):
                if i < len(w) - 1 and w[i] == a and w[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(w[i])
                    i += 1
            words[wi] = merged
            for p in zip(merged, merged[1:]):
                pair_counts[p] += f
                where[p].add(wi)
                touched.add(p)
        pair_counts.pop(pair, None)
        for p in touched:
            c = pair_counts.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                pair_counts.pop(p, None)
    return Vocab(merges, specials)
