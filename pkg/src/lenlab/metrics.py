"""Completion metrics and the train-length x test-length generalization analysis.

String metrics compare a prediction with its reference after flattening, so
tags such as ⟨NEW_LINE⟩ count as ordinary text. Word-level metrics split
on whitespace; chrF ignores whitespace entirely.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Sequence

import numpy as np

TRAIN_BUCKETS = ("short", "medium", "long")
METRICS = ("exact_match", "bleu", "chrf", "rouge_l", "meteor", "levenshtein", "cross_entropy")
# metrics where a smaller value is better
LOWER_IS_BETTER = frozenset({"cross_entropy"})


def normalize(text: str) -> str:
    """Collapse whitespace runs and strip the ends."""
    return " ".join(text.split())


def exact_match(pred: str, target: str) -> int:
    return int(normalize(pred) == normalize(target))


# ---------------------------------------------------------------- edit distance


def levenshtein(a: str, b: str) -> int:
    """Character-level insert/delete/substitute distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def levenshtein_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    return 1.0 if longest == 0 else 1.0 - levenshtein(a, b) / longest


# ---------------------------------------------------------------- chrF


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i: i + n] for i in range(len(text) - n + 1))


def chrf(pred: str, target: str, max_order: int = 6, beta: float = 2.0) -> float:
    """Character n-gram F-beta averaged over orders 1..max_order, in [0, 100].

    Whitespace is removed first. Only orders for which both strings have at
    least one n-gram are averaged; an order with no matching n-gram scores 0.
    """
    hyp = "".join(pred.split())
    ref = "".join(target.split())
    if not hyp and not ref:
        return 100.0
    scores = []
    b2 = beta * beta
    for n in range(1, max_order + 1):
        h, r = _char_ngrams(hyp, n), _char_ngrams(ref, n)
        if not h or not r:
            continue
        match = sum((h & r).values())
        if match == 0:
            scores.append(0.0)
            continue
        p = match / sum(h.values())
        rc = match / sum(r.values())
        scores.append((1 + b2) * p * rc / (b2 * p + rc))
    return 100.0 * sum(scores) / len(scores) if scores else 0.0


# ---------------------------------------------------------------- ROUGE-L


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_prf(pred: str, target: str) -> tuple[float, float, float]:
    """(precision, recall, F1) of the whitespace-token LCS."""
    h, r = pred.split(), target.split()
    if not h and not r:
        return 1.0, 1.0, 1.0
    lcs = lcs_length(h, r)
    if lcs == 0:
        return 0.0, 0.0, 0.0
    p, rc = lcs / len(h), lcs / len(r)
    return p, rc, 2 * p * rc / (p + rc)


def rouge_l(pred: str, target: str) -> float:
    return rouge_l_prf(pred, target)[2]


# ---------------------------------------------------------------- BLEU


def _word_ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu(preds: Sequence[str], targets: Sequence[str], max_order: int = 4) -> float:
    """Corpus BLEU in [0, 100] with brevity penalty.

    Orders above 1 with no clipped match use precision 1 / (total + 1)
    (add-one on the numerator and denominator); zero unigram matches give 0.
    """
    if len(preds) != len(targets):
        raise ValueError("bleu: preds and targets differ in length")
    if not preds:
        raise ValueError("bleu: empty corpus")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for p, t in zip(preds, targets):
        h, r = p.split(), t.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_order + 1):
            hc, rc = _word_ngrams(h, n), _word_ngrams(r, n)
            matches[n - 1] += sum((hc & rc).values())
            totals[n - 1] += sum(hc.values())
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_order):
        if matches[n] == 0:
            log_p += math.log(1.0 / (totals[n] + 1))
        else:
            log_p += math.log(matches[n] / totals[n])
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_order)


# ---------------------------------------------------------------- METEOR


def meteor_alignment(h: Sequence[str], r: Sequence[str]) -> list[tuple[int, int]]:
    """Greedy exact-match alignment: each hypothesis token takes the first unused equal reference token."""
    used = [False] * len(r)
    pairs = []
    for i, tok in enumerate(h):
        for j, ref in enumerate(r):
            if not used[j] and ref == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def meteor(pred: str, target: str) -> float:
    """F = 10PR / (R + 9P) times (1 - 0.5 * (chunks / matches) ** 3), in [0, 1]."""
    h, r = pred.split(), target.split()
    pairs = meteor_alignment(h, r)
    m = len(pairs)
    if m == 0:
        return 0.0
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    p, rc = m / len(h), m / len(r)
    f = 10 * p * rc / (rc + 9 * p)
    return f * (1.0 - 0.5 * (chunks / m) ** 3)


# ---------------------------------------------------------------- model cross-entropy


def cross_entropy(model, instances: Sequence[tuple[Sequence[int], Sequence[int]]], batch_size: int = 64) -> float:
    """Mean -log p(token) over all non-pad target tokens (teacher forcing)."""
    from . import tensor as T
    from .model import loss

    total, count = 0.0, 0
    with T.no_grad():
        for i in range(0, len(instances), batch_size):
            chunk = instances[i: i + batch_size]
            n = sum(len(t) for _, t in chunk)
            total += loss(model, chunk).item() * n
            count += n
    return total / count if count else float("nan")


# ---------------------------------------------------------------- reports


def round_half_even(x: float, places: int = 2) -> float:
    return float(Decimal(repr(x)).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_EVEN))


def avg_delta(matched: float, others: Iterable[float]) -> float | None:
    """Mean relative drop (in %) of ``others`` versus the length-matched score.

    Returns None (reported as N/A) when the matched score is 0.
    """
    others = list(others)
    if matched == 0 or not others:
        return None
    return 100.0 * sum((matched - o) / matched for o in others) / len(others)


def mix_delta(mix_score: float, matched: float) -> float | None:
    """Relative change (in %) of the mix-trained model versus the length-matched one."""
    if matched == 0:
        return None
    return 100.0 * (mix_score - matched) / matched


@dataclass
class EvalReport:
    """Per-instance scores plus aggregates (percentages, except cross-entropy)."""

    metadata: dict
    records: list[dict] = field(default_factory=list)
    aggregates: dict[str, float] = field(default_factory=dict)


def evaluate(preds: Sequence[str], targets: Sequence[str], metadata: dict | None = None,
             cross_entropy_value: float | None = None) -> EvalReport:
    """Score predictions. Sentence metrics are averaged; BLEU is corpus-level."""
    if len(preds) != len(targets):
        raise ValueError("evaluate: preds and targets differ in length")
    records = []
    for i, (p, t) in enumerate(zip(preds, targets)):
        records.append({
            "index": i,
            "exact_match": exact_match(p, t),
            "chrf": chrf(p, t),
            "rouge_l": rouge_l(p, t),
            "meteor": meteor(p, t),
            "levenshtein": levenshtein(p, t),
            "levenshtein_similarity": levenshtein_similarity(p, t),
        })
    agg: dict[str, float] = {}
    if records:
        agg = {
            "exact_match": 100.0 * float(np.mean([r["exact_match"] for r in records])),
            "bleu": bleu(preds, targets),
            "chrf": float(np.mean([r["chrf"] for r in records])),
            "rouge_l": 100.0 * float(np.mean([r["rouge_l"] for r in records])),
            "meteor": 100.0 * float(np.mean([r["meteor"] for r in records])),
            "levenshtein": 100.0 * float(np.mean([r["levenshtein_similarity"] for r in records])),
        }
    if cross_entropy_value is not None:
        agg["cross_entropy"] = cross_entropy_value
    return EvalReport(dict(metadata or {}), records, agg)


class IncompleteMatrixError(ValueError):
    def __init__(self, missing: list[tuple[str, str, str]]):
        self.missing = missing
        shown = ", ".join(f"({s}, {tr}, {te})" for s, tr, te in missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        super().__init__(f"matrix is missing {len(missing)} cell(s): {shown}{more}")


@dataclass
class GeneralizationMatrix:
    """score[(scheme, train_bucket, test_bucket, metric)]; Δ columns are always recomputed."""

    scores: dict[tuple[str, str, str, str], float] = field(default_factory=dict)

    def set(self, scheme: str, train: str, test: str, metric: str, value: float) -> None:
        self.scores[(scheme, train, test, metric)] = float(value)

    def get(self, scheme: str, train: str, test: str, metric: str) -> float:
        return self.scores[(scheme, train, test, metric)]

    def add_report(self, scheme: str, train: str, test: str, report: EvalReport) -> None:
        for metric, value in report.aggregates.items():
            self.set(scheme, train, test, metric, value)

    @property
    def schemes(self) -> list[str]:
        return sorted({k[0] for k in self.scores})

    @property
    def metrics(self) -> list[str]:
        present = {k[3] for k in self.scores}
        return [m for m in METRICS if m in present] + sorted(present - set(METRICS))

    @property
    def train_buckets(self) -> list[str]:
        present = {k[1] for k in self.scores}
        return [b for b in (*TRAIN_BUCKETS, "mix") if b in present]

    def missing_cells(self, schemes: Sequence[str], trains: Sequence[str], tests: Sequence[str] = TRAIN_BUCKETS,
                      metrics: Sequence[str] | None = None) -> list[tuple[str, str, str]]:
        metrics = list(metrics or self.metrics)
        out = []
        for s in schemes:
            for tr in trains:
                for te in tests:
                    if not metrics or any((s, tr, te, m) not in self.scores for m in metrics):
                        out.append((s, tr, te))
        return out

    def require_complete(self, schemes, trains, tests=TRAIN_BUCKETS, metrics=None) -> None:
        missing = self.missing_cells(schemes, trains, tests, metrics)
        if missing:
            raise IncompleteMatrixError(missing)

    def avg_delta(self, scheme: str, test: str, metric: str) -> float | None:
        matched = self.get(scheme, test, test, metric)
        others = [self.get(scheme, o, test, metric) for o in TRAIN_BUCKETS if o != test]
        return avg_delta(matched, others)

    def mix_delta(self, scheme: str, test: str, metric: str) -> float | None:
        return mix_delta(self.get(scheme, "mix", test, metric), self.get(scheme, test, test, metric))

    def rows(self) -> list[dict]:
        return [{"scheme": s, "train_bucket": tr, "test_bucket": te, "metric": m, "score": v}
                for (s, tr, te, m), v in sorted(self.scores.items())]
