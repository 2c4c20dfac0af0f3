"""Render a generalization matrix as markdown tables, CSV files and figures.

Main tables have one block per test bucket and one row per scheme; columns
are the training buckets followed by Avg Δ. Markers:

* ``**x**``   best training bucket for that (test bucket, scheme) row
* ``[x]``     best (scheme, training bucket) cell of the test-bucket block
* ``x ↓``     lowest Avg Δ within the block (best generalization)

Mix tables have one row per scheme with its Δ row (change of the mix-trained
model relative to the length-matched one) beneath; ``**x**`` marks the best
scheme per test bucket.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

from .metrics import (LOWER_IS_BETTER, TRAIN_BUCKETS, GeneralizationMatrix, IncompleteMatrixError,
                      round_half_even)

TEST_BUCKETS = TRAIN_BUCKETS
METRIC_TITLES = {
    "exact_match": "Exact Match (%)",
    "bleu": "BLEU",
    "chrf": "chrF",
    "rouge_l": "ROUGE-L F1 (%)",
    "meteor": "METEOR (%)",
    "levenshtein": "Levenshtein similarity (%)",
    "cross_entropy": "Cross-entropy (nats/token)",
}


def fmt(x: float | None) -> str:
    return "N/A" if x is None else f"{round_half_even(x):.2f}"


def fmt_signed(x: float | None) -> str:
    if x is None:
        return "N/A"
    r = round_half_even(x)
    return f"{'+' if r >= 0 else ''}{r:.2f}%"


def _best(values: Sequence[float], metric: str) -> float:
    return min(values) if metric in LOWER_IS_BETTER else max(values)


def render_main_table(matrix: GeneralizationMatrix, metric: str, schemes: Sequence[str]) -> str:
    matrix.require_complete(schemes, TRAIN_BUCKETS, TEST_BUCKETS, [metric])
    title = METRIC_TITLES.get(metric, metric)
    arrow = "↓" if metric in LOWER_IS_BETTER else "↑"
    lines = [f"### {title} {arrow}", "",
             "| Test | Scheme | " + " | ".join(b.capitalize() for b in TRAIN_BUCKETS) + " | Avg Δ |",
             "|---|---|" + "---:|" * (len(TRAIN_BUCKETS) + 1)]
    for test in TEST_BUCKETS:
        cells = {(s, tr): matrix.get(s, tr, test, metric) for s in schemes for tr in TRAIN_BUCKETS}
        block_best = _best(list(cells.values()), metric)
        deltas = {s: matrix.avg_delta(s, test, metric) for s in schemes}
        defined = [d for d in deltas.values() if d is not None]
        lowest = min(defined) if defined else None
        for k, s in enumerate(schemes):
            row_best = _best([cells[(s, tr)] for tr in TRAIN_BUCKETS], metric)
            parts = []
            for tr in TRAIN_BUCKETS:
                v = cells[(s, tr)]
                text = fmt(v)
                if v == row_best:
                    text = f"**{text}**"
                if v == block_best:
                    text = f"[{text}]"
                parts.append(text)
            d = deltas[s]
            dtext = fmt(d) + ("%" if d is not None else "")
            if d is not None and d == lowest:
                dtext += " ↓"
            label = test.capitalize() if k == 0 else ""
            lines.append(f"| {label} | {s} | " + " | ".join(parts) + f" | {dtext} |")
    lines += ["", "Rows: test bucket and scheme. Columns: training bucket. **bold**: best training bucket "
              "for the row; [x]: best cell of the test bucket; ↓: lowest Avg Δ for the test bucket.", ""]
    return "\n".join(lines)


def render_mix_table(matrix: GeneralizationMatrix, metric: str, schemes: Sequence[str]) -> str:
    matrix.require_complete(schemes, [*TRAIN_BUCKETS, "mix"], TEST_BUCKETS, [metric])
    title = METRIC_TITLES.get(metric, metric)
    lines = [f"### {title}, trained on mix", "",
             "| Scheme | " + " | ".join(b.capitalize() for b in TEST_BUCKETS) + " |",
             "|---|" + "---:|" * len(TEST_BUCKETS)]
    best = {t: _best([matrix.get(s, "mix", t, metric) for s in schemes], metric) for t in TEST_BUCKETS}
    for s in schemes:
        vals = []
        for t in TEST_BUCKETS:
            v = matrix.get(s, "mix", t, metric)
            vals.append(f"**{fmt(v)}**" if v == best[t] else fmt(v))
        lines.append(f"| {s} | " + " | ".join(vals) + " |")
        lines.append("| Δ | " + " | ".join(fmt_signed(matrix.mix_delta(s, t, metric)) for t in TEST_BUCKETS) + " |")
    lines += ["", "Δ: relative change versus the model trained on the matching length bucket.", ""]
    return "\n".join(lines)


def render_markdown(matrix: GeneralizationMatrix, metrics: Sequence[str] | None = None,
                    schemes: Sequence[str] | None = None, title: str = "Length generalization report") -> str:
    schemes = list(schemes or matrix.schemes)
    metrics = list(metrics or matrix.metrics)
    has_mix = any(k[1] == "mix" for k in matrix.scores)
    out = [f"# {title}", ""]
    for m in metrics:
        out.append(render_main_table(matrix, m, schemes))
        if has_mix:
            out.append(render_mix_table(matrix, m, schemes))
    return "\n".join(out)


def aggregate_csv(matrix: GeneralizationMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "train_bucket", "test_bucket", "metric", "score"])
    for r in matrix.rows():
        w.writerow([r["scheme"], r["train_bucket"], r["test_bucket"], r["metric"], repr(r["score"])])
    return buf.getvalue()


def matrix_csv(matrix: GeneralizationMatrix, metric: str, schemes: Sequence[str]) -> str:
    """Table layout: (test bucket, scheme) rows, training-bucket columns, Avg Δ and mix Δ."""
    has_mix = all((s, "mix", t, metric) in matrix.scores for s in schemes for t in TEST_BUCKETS)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    trains = [*TRAIN_BUCKETS, "mix"] if has_mix else list(TRAIN_BUCKETS)
    w.writerow(["test_bucket", "scheme", *trains, "avg_delta", *(["mix_delta"] if has_mix else [])])
    for t in TEST_BUCKETS:
        for s in schemes:
            row = [t, s, *(repr(matrix.get(s, tr, t, metric)) for tr in trains)]
            d = matrix.avg_delta(s, t, metric)
            row.append("N/A" if d is None else repr(d))
            if has_mix:
                md = matrix.mix_delta(s, t, metric)
                row.append("N/A" if md is None else repr(md))
            w.writerow(row)
    return buf.getvalue()


def plot_heatmaps(matrix: GeneralizationMatrix, metric: str, schemes: Sequence[str], path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    trains = [b for b in (*TRAIN_BUCKETS, "mix") if all((s, b, t, metric) in matrix.scores
                                                        for s in schemes for t in TEST_BUCKETS)]
    fig, axes = plt.subplots(1, len(schemes), figsize=(3.2 * len(schemes), 3.2), squeeze=False)
    values = [matrix.get(s, tr, t, metric) for s in schemes for tr in trains for t in TEST_BUCKETS]
    vmin, vmax = min(values), max(values)
    for ax, s in zip(axes[0], schemes):
        grid = np.array([[matrix.get(s, tr, t, metric) for t in TEST_BUCKETS] for tr in trains])
        im = ax.imshow(grid, vmin=vmin, vmax=vmax, cmap="viridis_r" if metric in LOWER_IS_BETTER else "viridis")
        ax.set_xticks(range(len(TEST_BUCKETS)), TEST_BUCKETS)
        ax.set_yticks(range(len(trains)), trains)
        ax.set_xlabel("test bucket")
        ax.set_title(s)
        for i in range(grid.shape[0]):
            for j in range(grid.shape[1]):
                ax.text(j, i, f"{grid[i, j]:.1f}", ha="center", va="center", fontsize=8, color="white")
    axes[0][0].set_ylabel("train bucket")
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    fig.suptitle(METRIC_TITLES.get(metric, metric))
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_avg_delta(matrix: GeneralizationMatrix, metric: str, schemes: Sequence[str], path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(schemes)
    x = np.arange(len(TEST_BUCKETS))
    for k, s in enumerate(schemes):
        ds = [matrix.avg_delta(s, t, metric) for t in TEST_BUCKETS]
        ax.bar(x + k * width, [0.0 if d is None else d for d in ds], width, label=s)
    ax.set_xticks(x + width * (len(schemes) - 1) / 2, TEST_BUCKETS)
    ax.set_xlabel("test bucket")
    ax.set_ylabel("Avg Δ (%)")
    ax.set_title(f"Avg Δ, {METRIC_TITLES.get(metric, metric)}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def write_report(matrix: GeneralizationMatrix, out_dir: str | Path, schemes: Sequence[str] | None = None,
                 metrics: Sequence[str] | None = None, figures: bool = True,
                 title: str = "Length generalization report") -> list[Path]:
    """Write report.md, scores.csv, one matrix_<metric>.csv (and figures) per metric."""
    schemes = list(schemes or matrix.schemes)
    metrics = list(metrics or matrix.metrics)
    missing = matrix.missing_cells(schemes, TRAIN_BUCKETS, TEST_BUCKETS, metrics)
    if missing:
        raise IncompleteMatrixError(missing)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    md = out / "report.md"
    md.write_text(render_markdown(matrix, metrics, schemes, title), encoding="utf-8")
    paths.append(md)
    agg = out / "scores.csv"
    agg.write_text(aggregate_csv(matrix))
    paths.append(agg)
    for m in metrics:
        p = out / f"matrix_{m}.csv"
        p.write_text(matrix_csv(matrix, m, schemes))
        paths.append(p)
        if figures:
            paths.append(plot_heatmaps(matrix, m, schemes, out / f"heatmap_{m}.png"))
            paths.append(plot_avg_delta(matrix, m, schemes, out / f"avg_delta_{m}.png"))
    return paths
