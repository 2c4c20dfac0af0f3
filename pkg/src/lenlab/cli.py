"""``lenlab`` command line: dataset, tokenizer, training, decoding, scoring, reporting.

Settings come from an optional JSON config (``--config``), then the named
flags, then ``--set section.key=value`` overrides. Exit codes: 0 success,
1 runtime failure, 2 invalid configuration or missing input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import experiment as X
from .config import PROFILES, SCHEMES, TASKS, TRAIN_BUCKETS, ExperimentConfig
from .metrics import IncompleteMatrixError
from .posenc import ConfigError
from .report import write_report
from .tokenizer import Vocab
from .trainer import TrainingError

log = logging.getLogger("lenlab")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment settings")
    g.add_argument("--config", type=Path, help="JSON experiment config")
    g.add_argument("--profile", choices=sorted(PROFILES), help="default settings profile (full or desk)")
    g.add_argument("--task", choices=TASKS)
    g.add_argument("--language", help="java or python")
    g.add_argument("--scheme", choices=SCHEMES)
    g.add_argument("--bucket", choices=TRAIN_BUCKETS, help="training bucket")
    g.add_argument("--seed", type=int)
    g.add_argument("--scale", type=float, help="fraction of the full-size dataset caps")
    g.add_argument("--data-dir", help="artifact root (default: $LENLAB_DATA_DIR or ./lenlab-data)")
    g.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. train.lr_peak=0.001 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lenlab", description="Positional-encoding length-generalization lab.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="ingest a function corpus into bucketed completion datasets")
    _common(p)
    p.add_argument("--corpus", help="JSON Lines corpus of {id, language, code}")

    p = sub.add_parser("train-tokenizer", help="train the BPE vocabulary on the training split")
    _common(p)
    p.add_argument("--joint", action="store_true", help="one vocabulary over both languages")

    p = sub.add_parser("train", help="train one (scheme, bucket) model")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue an interrupted run; skip a finished one")

    for name, helptext in (("generate", "decode the test buckets with a trained model"),
                           ("evaluate", "score predictions and write per-instance and aggregate results")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--test-buckets", nargs="+", choices=X.TEST_BUCKETS, default=list(X.TEST_BUCKETS))

    p = sub.add_parser("report", help="render tables, CSVs and figures for a finished matrix")
    _common(p)
    p.add_argument("--matrix-dir", type=Path, help="directory of one matrix (default: derived from the config)")
    p.add_argument("--out", type=Path, help="output directory (default: <matrix-dir>/report)")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("run-matrix", help="train and evaluate every scheme x training bucket, then report")
    _common(p)
    p.add_argument("--schemes", nargs="+", choices=SCHEMES)
    p.add_argument("--buckets", nargs="+", choices=TRAIN_BUCKETS, help="training buckets")
    p.add_argument("--resume", action="store_true", help="never retrain a finished cell")
    p.add_argument("--no-figures", action="store_true")
    return ap


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    d = cfg.to_dict()
    for key in ("profile", "task", "language", "scheme", "bucket", "seed", "scale"):
        value = getattr(args, key, None)
        if value is not None:
            d[key] = value
    if getattr(args, "schemes", None):
        d["schemes"] = args.schemes
    if getattr(args, "buckets", None):
        d["train_buckets"] = args.buckets
    if args.data_dir:
        d["paths"] = {**d["paths"], "data_dir": args.data_dir}
    if getattr(args, "corpus", None):
        d["paths"] = {**d["paths"], "corpus": args.corpus}
    return ExperimentConfig.from_dict(d).override(args.overrides)


def cmd_build_dataset(cfg: ExperimentConfig, args) -> int:
    if cfg.task != "code":
        raise ConfigError("build-dataset applies to task 'code'; toy data is generated on the fly")
    corpus = cfg.paths.get("corpus")
    if not corpus:
        raise ConfigError("no corpus given (use --corpus or paths.corpus)")
    if not Path(corpus).is_file():
        raise FileNotFoundError(f"corpus not found: {corpus}")
    manifest = X.build_dataset(cfg, corpus)
    print(json.dumps({"out": str(X.dataset_dir(cfg)), "counts": manifest["counts"],
                      "boundaries": manifest["boundaries"]}, indent=2))
    return 0


def cmd_train_tokenizer(cfg: ExperimentConfig, args) -> int:
    if cfg.task != "code":
        raise ConfigError("train-tokenizer applies to task 'code'")
    path = X.train_tokenizer(cfg, joint=True if args.joint else None)
    vocab = Vocab.load(path)
    print(json.dumps({"path": str(path), "size": len(vocab), "content_hash": vocab.content_hash}))
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    ckpt = X.train_cell(cfg, resume=args.resume)
    print(json.dumps({"checkpoint": str(X.cell_dir(cfg) / "best"), "step": ckpt.step,
                      "valid_loss": ckpt.valid_loss, "config_hash": cfg.config_hash()}))
    return 0


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    ckpt = X.load_best(cfg)
    data = X.task_data(cfg, args.test_buckets, need_train=False)
    paths = X.generate_cell(cfg, ckpt, data, args.test_buckets)
    print(json.dumps({b: str(p) for b, p in paths.items()}))
    return 0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    ckpt = X.load_best(cfg)
    data = X.task_data(cfg, args.test_buckets, need_train=False)
    results = X.evaluate_cell(cfg, ckpt, data, args.test_buckets)
    print(json.dumps({b: r["aggregates"] for b, r in results.items()}, indent=2))
    return 0


def cmd_report(cfg: ExperimentConfig, args) -> int:
    directory = args.matrix_dir or X.matrix_dir(cfg)
    matrix, found = X.load_matrix(directory)
    schemes = [s for s in cfg.schemes if s in matrix.schemes] if not args.matrix_dir else matrix.schemes
    out = args.out or Path(directory) / "report"
    paths = write_report(matrix, out, schemes, figures=not args.no_figures,
                         title=f"Length generalization report ({found})")
    print("\n".join(str(p) for p in paths))
    return 0


def cmd_run_matrix(cfg: ExperimentConfig, args) -> int:
    t0 = time.time()
    matrix = X.run_matrix(cfg, resume=args.resume)
    out = X.matrix_dir(cfg) / "report"
    paths = write_report(matrix, out, cfg.schemes, figures=not args.no_figures,
                         title=f"Length generalization report ({cfg.matrix_hash()})")
    print(json.dumps({"report": str(paths[0]), "seconds": round(time.time() - t0, 1)}))
    return 0


COMMANDS = {
    "build-dataset": cmd_build_dataset,
    "train-tokenizer": cmd_train_tokenizer,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "run-matrix": cmd_run_matrix,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"lenlab: error: {e}", file=sys.stderr)
        return 2
    except (X.ExperimentError, IncompleteMatrixError, TrainingError) as e:
        print(f"lenlab: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
