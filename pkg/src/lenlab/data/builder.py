"""Length-bucketed code-completion datasets from a corpus of standalone functions.

Pipeline: ingest (ASCII filter, lexing, comment stripping, length cap,
function dedup) -> candidate spans (Java statements / Python blocks with at
least 11 tokens; the last 11 are masked) -> drop functions without
candidates -> length terciles -> one instance per candidate -> global
(input, target) dedup -> function-grouped 80/10/10 split -> per-bucket caps
-> mix set. Everything is ordered canonically so re-runs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .lexer import LexError, Token, lex, lex_java, lex_python

log = logging.getLogger(__name__)

MASK_TAG = "⟨MASK⟩"
NEW_LINE_TAG = "⟨NEW_LINE⟩"
TAB_TAG = "⟨TAB⟩"
SPAN_TOKENS = 11
MAX_FUNCTION_TOKENS = 1024
BUCKETS = ("short", "medium", "long")
SPLITS = ("train", "valid", "test")
DEFAULT_CAPS = (280_000, 35_000, 35_000)
# full-scale tercile boundaries reported for the mined corpora (reference only)
REFERENCE_BOUNDARIES = {"java": (96, 180), "python": (150, 309)}


class DatasetError(ValueError):
    """Pipeline cannot produce a valid dataset (e.g. an empty bucket)."""


@dataclass(frozen=True)
class SourceFunction:
    id: str
    language: str
    code: str
    lexer_token_count: int
    tokens: tuple[Token, ...] = field(repr=False, compare=False, default=())


@dataclass(frozen=True)
class CompletionInstance:
    input: str
    target: str
    function_id: str
    bucket: str
    split: str
    span_index: int = field(default=0, compare=False)  # position of the span inside the function

    def to_json(self) -> str:
        return json.dumps({"input": self.input, "target": self.target, "function_id": self.function_id,
                           "bucket": self.bucket, "split": self.split}, ensure_ascii=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CompletionInstance":
        return cls(d["input"], d["target"], d["function_id"], d["bucket"], d["split"])


@dataclass
class BucketSpec:
    boundaries: tuple[int, int]          # max length in short, max length in medium
    ranges: dict[str, tuple[int, int]]   # observed (min, max) length per bucket
    sizes: dict[str, int]
    caps: dict[str, int] = field(default_factory=dict)


# ---------------------------------------------------------------- ingestion


@dataclass
class IngestStats:
    seen: int = 0
    kept: int = 0
    rejected: Counter = field(default_factory=Counter)


def read_corpus(path: str | Path) -> list[dict]:
    """JSON Lines of {"id", "language", "code"}."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            missing = {"id", "language", "code"} - set(rec)
            if missing:
                raise DatasetError(f"{path}:{n}: missing keys {sorted(missing)}")
            out.append(rec)
    return out


def _docstring_tokens(tokens: Sequence[Token]) -> set[int]:
    """Indices of Python docstrings (and their newline) opening a def/class suite."""
    drop: set[int] = set()
    header = False
    for i, t in enumerate(tokens):
        if t.kind == "name" and t.text in ("def", "class") and (
                i == 0 or tokens[i - 1].kind in ("newline", "indent", "dedent")
                or tokens[i - 1].text in ("async",)):
            header = True
        if t.kind == "indent" and header and i + 2 < len(tokens):
            s, nl = tokens[i + 1], tokens[i + 2]
            if s.kind == "string" and nl.kind == "newline":
                drop.update((i + 1, i + 2))
        if t.kind == "newline":
            header = header and tokens[i - 1].text == ":" if i else False
    return drop


def _strip(language: str, tokens: list[Token], strip_all_comments: bool) -> list[Token]:
    if language == "python":
        drop = _docstring_tokens(tokens)
        tokens = [t for i, t in enumerate(tokens) if i not in drop]
    out = []
    for t in tokens:
        if t.kind == "comment":
            javadoc = t.text.startswith("/**")
            if strip_all_comments or javadoc:
                continue
        out.append(t)
    return out


def _significant(tokens: Iterable[Token]) -> list[Token]:
    return [t for t in tokens if t.significant]


def make_function(rec: dict, language: str, strip_all_comments: bool = True) -> SourceFunction:
    """Lex and filter one corpus record; raises ``DatasetError`` with a reason on rejection."""
    code = rec["code"].replace("\r\n", "\n").replace("\r", "\n")
    if not code.isascii():
        raise DatasetError("non_ascii")
    try:
        tokens = lex(language, code)
    except LexError as exc:
        raise DatasetError(f"lex_error: {exc}") from exc
    tokens = _strip(language, tokens, strip_all_comments)
    if language == "python" and tokens and tokens[0].kind == "indent":
        raise DatasetError("indented_definition")
    for t in tokens:
        if t.kind == "string" and "\t" in t.text:
            raise DatasetError("tab_in_literal")
        if t.kind == "string" and "\n" in t.text and language == "java":
            raise DatasetError("multiline_literal")
    count = len(_significant(tokens))
    if count == 0:
        raise DatasetError("empty")
    if count > MAX_FUNCTION_TOKENS:
        raise DatasetError("too_long")
    return SourceFunction(str(rec["id"]), language, code, count, tuple(tokens))


def ingest(records: Iterable[dict], language: str, strip_all_comments: bool = True
           ) -> tuple[list[SourceFunction], IngestStats]:
    """Filter records of ``language``; duplicates (same flattened code) keep the smallest id."""
    stats = IngestStats()
    kept: list[SourceFunction] = []
    seen_code: set[str] = set()
    for rec in sorted((r for r in records if r["language"] == language), key=lambda r: str(r["id"])):
        stats.seen += 1
        try:
            fn = make_function(rec, language, strip_all_comments)
        except DatasetError as exc:
            reason = str(exc).split(":")[0]
            stats.rejected[reason] += 1
            log.debug("rejected %s: %s", rec["id"], exc)
            continue
        key = normalize_ws(flatten(fn)[0])
        if key in seen_code:
            stats.rejected["duplicate"] += 1
            continue
        seen_code.add(key)
        kept.append(fn)
    stats.kept = len(kept)
    return kept, stats


# ---------------------------------------------------------------- candidates

_CONTROL_PAREN = {"if", "while", "for", "switch", "catch", "synchronized", "try"}
_CONTROL_BARE = {"else", "do", "try", "finally"}


def _matching(sig: Sequence[Token], i: int) -> int:
    """Index of the bracket closing the one at ``i``."""
    opener = sig[i].text
    closer = {"(": ")", "[": "]", "{": "}"}[opener]
    depth = 0
    for j in range(i, len(sig)):
        if sig[j].text == opener:
            depth += 1
        elif sig[j].text == closer:
            depth -= 1
            if depth == 0:
                return j
    return len(sig) - 1


@dataclass
class _Frame:
    base: int        # paren depth when the brace opened
    start: int       # index of the current statement's first token
    statement: bool  # opened at a statement boundary (block) vs. mid-expression


def java_statements(sig: Sequence[Token]) -> list[tuple[int, int]]:
    """(first, last) significant-token indices of ``;``-terminated statements in a method body.

    Control headers (``if (...)``, ``else``, ``for (...)``...), case labels and
    statement labels are not part of the statement that follows them.
    """
    paren = 0
    body = None
    for i, t in enumerate(sig):
        if t.text in "([":
            paren += 1
        elif t.text in ")]":
            paren -= 1
        elif t.text == "{" and paren == 0:
            body = i
            break
        elif t.text == ";" and paren == 0:
            return []  # abstract or interface method
    if body is None:
        return []
    frames = [_Frame(0, body + 1, True)]
    paren = 0
    out: list[tuple[int, int]] = []
    i = body + 1
    n = len(sig)
    while i < n and frames:
        t = sig[i].text
        f = frames[-1]
        if i == f.start and paren == f.base:
            if t in _CONTROL_PAREN and i + 1 < n and sig[i + 1].text == "(":
                i = f.start = _matching(sig, i + 1) + 1
                continue
            if t in _CONTROL_BARE:
                i = f.start = i + 1
                continue
            if t in ("case", "default"):
                j = i + 1
                while j < n and sig[j].text not in (":", "->"):
                    j += 1
                i = f.start = j + 1
                continue
            if sig[i].kind == "name" and i + 1 < n and sig[i + 1].text == ":":
                i = f.start = i + 2
                continue
            if t == "{":
                frames.append(_Frame(paren, i + 1, True))
                i += 1
                continue
            if t == ";":
                i = f.start = i + 1
                continue
        if t in ("(", "["):
            paren += 1
        elif t in (")", "]"):
            paren -= 1
        elif t == "{":
            frames.append(_Frame(paren, i + 1, False))
        elif t == "}":
            closed = frames.pop()
            if frames and closed.statement:
                frames[-1].start = i + 1
        elif t == ";" and paren == f.base:
            out.append((f.start, i))
            f.start = i + 1
        i += 1
    return out


def python_blocks(tokens: Sequence[Token]) -> list[tuple[int, int]]:
    """(first, last) significant-token indices of every indented suite."""
    sig_index: dict[int, int] = {}
    k = 0
    for i, t in enumerate(tokens):
        if t.significant:
            sig_index[i] = k
            k += 1
    out = []
    for i, t in enumerate(tokens):
        if t.kind != "indent":
            continue
        level, first, last = 0, None, None
        for j in range(i, len(tokens)):
            u = tokens[j]
            if u.kind == "indent":
                level += 1
            elif u.kind == "dedent":
                level -= 1
                if level == 0:
                    break
            elif j in sig_index:
                first = sig_index[j] if first is None else first
                last = sig_index[j]
        if first is not None:
            out.append((first, last))
    return out


def extract_candidates(fn: SourceFunction, span_tokens: int = SPAN_TOKENS) -> list[tuple[int, int]]:
    """Maskable spans as (first, last) significant-token indices, sorted and unique.

    Each span is the last ``span_tokens`` tokens of a statement (Java) or
    block (Python) having at least that many tokens.
    """
    if fn.language == "java":
        units = java_statements(_significant(fn.tokens))
    else:
        units = python_blocks(fn.tokens)
    spans = {(last - span_tokens + 1, last) for first, last in units if last - first + 1 >= span_tokens}
    return sorted(spans)


# ---------------------------------------------------------------- flatten


def _line_break(language: str, depth: int) -> str:
    if language == "java":
        return NEW_LINE_TAG
    return TAB_TAG * (depth + 1)


def _render(fn: SourceFunction, items: Sequence[tuple[Token, bool, int]],
            span: tuple[int, int] | None = None) -> str:
    """Join tokens with flattened separators; tokens inside ``span`` become one MASK tag.

    ``items`` are (token, starts_logical_line, significant index or -1).
    """
    code = fn.code
    lo = hi = None
    if span is not None:
        lo = next(t.start for t, _, k in items if k == span[0])
        hi = next(t.end for t, _, k in items if k == span[1])
    parts: list[str] = []
    prev: Token | None = None
    masked = False
    for tok, logical_start, _ in items:
        inside = lo is not None and tok.start >= lo and tok.end <= hi
        if inside and masked:
            prev = tok
            continue
        if prev is not None:
            between = code[prev.end: tok.start]
            python_joined = fn.language == "python" and re.search(r"\\\r?\n", between)
            if "\n" in between and not python_joined:
                depth = tok.depth if (logical_start or fn.language == "java") else tok.depth + 1
                parts.append(_line_break(fn.language, depth))
            elif between:
                parts.append(" ")
        if inside:
            parts.append(MASK_TAG)
            masked = True
        else:
            parts.append(_flat_text(tok))
        prev = tok
    return "".join(parts)


def _flat_text(tok: Token) -> str:
    return tok.text.replace("\n", NEW_LINE_TAG) if tok.kind == "string" else tok.text


def _items(fn: SourceFunction) -> list[tuple[Token, bool, int]]:
    items = []
    logical_start = True
    k = 0
    for t in fn.tokens:
        if t.kind in ("newline", "indent", "dedent"):
            logical_start = logical_start or t.kind == "newline"
            continue
        sig = k if t.significant else -1
        if t.significant:
            k += 1
        items.append((t, logical_start, sig))
        logical_start = False
    return items


def flatten(fn: SourceFunction, span: tuple[int, int] | None = None) -> tuple[str, str]:
    """(input, target) with ``span`` masked; with no span, (flattened code, "").

    Java line breaks become one NEW_LINE tag and indentation disappears.
    Python line breaks become (depth + 1) TAB tags, so the tag run encodes
    both the newline and the indentation depth of the next line
    (continuation lines count one level deeper than their logical line).
    Newlines inside string literals become NEW_LINE tags. The target is the
    span rendered with the same rules (comments inside it are dropped).
    """
    items = _items(fn)
    if span is None:
        return _render(fn, items), ""
    a, b = span
    target = _render(fn, [it for it in items if a <= it[2] <= b])
    return _render(fn, items, span), target


def unflatten(language: str, text: str) -> str:
    """Inverse of :func:`flatten` up to whitespace inside a line."""
    if language == "java":
        return text.replace(NEW_LINE_TAG, "\n")
    text = re.sub(f"(?:{re.escape(TAB_TAG)})+",
                  lambda m: "\n" + "    " * (len(m.group()) // len(TAB_TAG) - 1), text)
    return text.replace(NEW_LINE_TAG, "\n")


def target_token_count(language: str, target: str) -> int:
    code = unflatten(language, target)
    toks = lex_java(code) if language == "java" else lex_python(code, fragment=True)
    return len(_significant(toks))


def normalize_ws(text: str) -> str:
    return " ".join(text.split())


# ---------------------------------------------------------------- buckets and splits


def bucket_by_length(functions: Sequence[SourceFunction]) -> tuple[BucketSpec, dict[str, str]]:
    """Equal-size terciles (+-1) of functions ranked by (token count, id)."""
    if len(functions) < 3:
        raise DatasetError(f"need at least 3 functions to form terciles, got {len(functions)}")
    ranked = sorted(functions, key=lambda f: (f.lexer_token_count, f.id))
    n = len(ranked)
    sizes = [n // 3 + (i < n % 3) for i in range(3)]
    assign: dict[str, str] = {}
    ranges: dict[str, tuple[int, int]] = {}
    pos = 0
    for name, size in zip(BUCKETS, sizes):
        chunk = ranked[pos: pos + size]
        for f in chunk:
            assign[f.id] = name
        ranges[name] = (chunk[0].lexer_token_count, chunk[-1].lexer_token_count)
        pos += size
    spec = BucketSpec((ranges["short"][1], ranges["medium"][1]), ranges, dict(zip(BUCKETS, sizes)))
    return spec, assign


def _unit_hash(*parts) -> float:
    h = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2.0 ** 64


def split_of(function_id: str, seed: int) -> str:
    u = _unit_hash("split", seed, function_id)
    return "train" if u < 0.8 else "valid" if u < 0.9 else "test"


def scaled_caps(scale: float, caps: Sequence[int] = DEFAULT_CAPS) -> dict[str, int]:
    return {s: max(1, int(round(c * scale))) for s, c in zip(SPLITS, caps)}


def _subsample(items: list[CompletionInstance], n: int, seed: int, salt: str) -> list[CompletionInstance]:
    if len(items) <= n:
        return list(items)
    ranked = sorted(items, key=lambda x: (_unit_hash(salt, seed, x.function_id, x.span_index), x.function_id,
                                          x.span_index))
    return _canonical(ranked[:n])


def _canonical(items: Iterable[CompletionInstance]) -> list[CompletionInstance]:
    return sorted(items, key=lambda x: (x.function_id, x.span_index))


def split_and_cap(instances: Sequence[CompletionInstance], seed: int, caps: dict[str, int],
                  align: bool = True) -> dict[tuple[str, str], list[CompletionInstance]]:
    """Assign splits by function id, then cap each (bucket, split).

    With ``align`` every bucket keeps the same number of instances per split
    (the smallest available count, limited by the cap).
    """
    grouped: dict[tuple[str, str], list[CompletionInstance]] = {(b, s): [] for b in BUCKETS for s in SPLITS}
    for x in instances:
        s = split_of(x.function_id, seed)
        grouped[(x.bucket, s)].append(
            CompletionInstance(x.input, x.target, x.function_id, x.bucket, s, x.span_index))
    empty = [f"{b}/{s}" for (b, s), v in grouped.items() if not v]
    if empty:
        raise DatasetError(f"empty bucket(s) after splitting: {', '.join(empty)}")
    out = {}
    for s in SPLITS:
        limit = caps[s]
        if align:
            limit = min(limit, *(len(grouped[(b, s)]) for b in BUCKETS))
        for b in BUCKETS:
            out[(b, s)] = _subsample(grouped[(b, s)], limit, seed, f"cap-{b}-{s}")
    return out


def build_mix(short: Sequence[CompletionInstance], medium: Sequence[CompletionInstance],
              long: Sequence[CompletionInstance], seed: int, size: int | None = None,
              split: str = "train") -> list[CompletionInstance]:
    """Equal thirds (+-1) from the three buckets; total defaults to len(short)."""
    size = len(short) if size is None else size
    shares = [size // 3 + (i < size % 3) for i in range(3)]
    out = []
    for name, src, k in zip(BUCKETS, (short, medium, long), shares):
        if len(src) < k:
            raise DatasetError(f"mix: {name} has {len(src)} instances, needs {k}")
        picked = _subsample(list(src), k, seed, f"mix-{name}-{split}")
        out.extend(CompletionInstance(x.input, x.target, x.function_id, "mix", split, x.span_index)
                   for x in picked)
    return out


# ---------------------------------------------------------------- full pipeline


@dataclass
class BuildResult:
    datasets: dict[tuple[str, str], list[CompletionInstance]]
    spec: BucketSpec
    stats: dict

    def manifest(self) -> dict:
        return {
            "boundaries": list(self.spec.boundaries),
            "ranges": {k: list(v) for k, v in self.spec.ranges.items()},
            "function_counts": self.spec.sizes,
            "caps": self.spec.caps,
            "counts": {f"{b}_{s}": len(v) for (b, s), v in sorted(self.datasets.items())},
            "stats": self.stats,
        }


def make_instances(fn: SourceFunction, bucket: str) -> list[CompletionInstance]:
    out = []
    for idx, span in enumerate(extract_candidates(fn)):
        inp, tgt = flatten(fn, span)
        out.append(CompletionInstance(inp, tgt, fn.id, bucket, "", span[0]))
    return out


def build_datasets(records: Iterable[dict], language: str, seed: int = 0, scale: float = 1.0,
                   strip_all_comments: bool = True, caps: Sequence[int] = DEFAULT_CAPS) -> BuildResult:
    functions, ingest_stats = ingest(records, language, strip_all_comments)
    with_spans = [(f, extract_candidates(f)) for f in functions]
    usable = [f for f, spans in with_spans if spans]
    dropped_no_span = len(functions) - len(usable)
    spec, assign = bucket_by_length(usable)

    seen: set[tuple[str, str]] = set()
    instances: list[CompletionInstance] = []
    duplicates = 0
    for fn in usable:  # already in id order
        for x in make_instances(fn, assign[fn.id]):
            key = (normalize_ws(x.input), normalize_ws(x.target))
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            instances.append(x)

    cap = scaled_caps(scale, caps)
    spec.caps = cap
    datasets = split_and_cap(instances, seed, cap)
    train_size = len(datasets[("short", "train")])
    valid_size = len(datasets[("short", "valid")])
    datasets[("mix", "train")] = build_mix(*(datasets[(b, "train")] for b in BUCKETS), seed, train_size, "train")
    datasets[("mix", "valid")] = build_mix(*(datasets[(b, "valid")] for b in BUCKETS), seed, valid_size, "valid")
    stats = {
        "functions_seen": ingest_stats.seen,
        "functions_kept": ingest_stats.kept,
        "rejected": dict(sorted(ingest_stats.rejected.items())),
        "no_candidate": dropped_no_span,
        "instances": len(instances) + duplicates,
        "duplicate_instances": duplicates,
    }
    log.info("built %s datasets: %s", language, stats)
    return BuildResult(datasets, spec, stats)


def write_datasets(result: BuildResult, out_dir: str | Path, meta: dict | None = None) -> list[Path]:
    """One JSONL per (bucket, split) plus mix files and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for (bucket, split), items in sorted(result.datasets.items()):
        p = out / f"{bucket}_{split}.jsonl"
        p.write_text("".join(x.to_json() + "\n" for x in items), encoding="utf-8")
        paths.append(p)
    manifest = {**(meta or {}), **result.manifest()}
    mp = out / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(mp)
    return paths


def read_dataset(path: str | Path) -> list[CompletionInstance]:
    with open(path, encoding="utf-8") as fh:
        return [CompletionInstance.from_dict(json.loads(line)) for line in fh if line.strip()]
