"""Experiment cells and the full train-length x test-length matrix.

A *cell* is one (scheme, train bucket) pair: train once, then generate and
score on each of the three test buckets. Artifacts live under::

    <data_dir>/datasets/<language>/{bucket}_{split}.jsonl, manifest.json
    <data_dir>/tokenizers/<language|joint>.json
    <data_dir>/runs/<dataset>/<matrix_hash>/<scheme>/<bucket>/
        config.json  best/  last/  history.csv  TRAINED
        predictions_<test>.jsonl  scores_<test>.jsonl  eval_<test>.json
    <data_dir>/runs/<dataset>/<matrix_hash>/report/

``matrix_hash`` covers every setting except the cell selection and paths,
so cells of one matrix share a directory and ``report`` can refuse to mix
artifacts from different configurations.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import synthetic
from .checkpoint import ModelCheckpoint
from .config import LANGUAGES, ExperimentConfig
from .data import builder
from .generator import generate_batch, write_predictions
from .metrics import GeneralizationMatrix, cross_entropy, evaluate
from .model import EOS_ID, build_model
from .tokenizer import SPECIALS, Vocab, train_bpe
from .trainer import fit

log = logging.getLogger(__name__)

TEST_BUCKETS = ("short", "medium", "long")
Example = tuple[list[int], list[int]]


class ExperimentError(RuntimeError):
    """An experiment step cannot proceed (missing inputs, mixed configurations)."""


# ---------------------------------------------------------------- paths


def dataset_dir(cfg: ExperimentConfig, language: str | None = None) -> Path:
    return cfg.data_dir() / "datasets" / (language or cfg.language)


def tokenizer_path(cfg: ExperimentConfig) -> Path:
    name = "joint" if cfg.resolve().data.get("joint_tokenizer") else cfg.language
    return cfg.data_dir() / "tokenizers" / f"{name}.json"


def matrix_dir(cfg: ExperimentConfig) -> Path:
    return cfg.data_dir() / "runs" / cfg.dataset_name / cfg.matrix_hash()


def cell_dir(cfg: ExperimentConfig) -> Path:
    return matrix_dir(cfg) / cfg.scheme / cfg.bucket


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- dataset and tokenizer


def build_dataset(cfg: ExperimentConfig, corpus: str | Path) -> dict:
    """Ingest a function corpus and write the bucketed JSONL datasets."""
    corpus = Path(corpus)
    if not corpus.is_file():
        raise FileNotFoundError(f"corpus not found: {corpus}")
    rcfg = cfg.resolve()
    records = builder.read_corpus(corpus)
    other = sum(1 for r in records if r["language"] != cfg.language)
    if other:
        log.warning("skipping %d records whose language is not %s", other, cfg.language)
    records = [r for r in records if r["language"] == cfg.language]
    result = builder.build_datasets(records, cfg.language, seed=cfg.seed, scale=rcfg.scale,
                                    strip_all_comments=rcfg.data["strip_all_comments"])
    meta = {"language": cfg.language, "seed": cfg.seed, "scale": rcfg.scale,
            "strip_all_comments": rcfg.data["strip_all_comments"], "corpus_sha256": file_sha256(corpus)}
    builder.write_datasets(result, dataset_dir(cfg), meta)
    return {**meta, **result.manifest()}


def tokenizer_corpus(cfg: ExperimentConfig, languages: Sequence[str]) -> list[str]:
    """Training-split inputs and targets (test text never shapes the vocabulary)."""
    texts: list[str] = []
    for lang in languages:
        for bucket in TEST_BUCKETS:
            path = dataset_dir(cfg, lang) / f"{bucket}_train.jsonl"
            if not path.is_file():
                raise ExperimentError(f"dataset missing: {path} (run build-dataset first)")
            for x in builder.read_dataset(path):
                texts += [x.input, x.target]
    return texts


def train_tokenizer(cfg: ExperimentConfig, joint: bool | None = None) -> Path:
    rcfg = cfg.resolve()
    if joint is None:
        joint = bool(rcfg.data["joint_tokenizer"])
    languages = LANGUAGES if joint else (cfg.language,)
    vocab = train_bpe(tokenizer_corpus(cfg, languages), rcfg.data["vocab_size"], SPECIALS)
    name = "joint" if joint else cfg.language
    path = cfg.data_dir() / "tokenizers" / f"{name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(path)
    log.info("tokenizer %s: %d tokens, hash %s", path, len(vocab), vocab.content_hash[:12])
    return path


# ---------------------------------------------------------------- task data


@dataclass
class TestSet:
    bucket: str
    examples: list[Example]
    targets: list[str]
    instance_ids: list[int]


@dataclass
class TaskData:
    train: list[Example]
    valid: list[Example]
    tests: dict[str, TestSet]
    vocab_size: int
    decode: Callable[[Sequence[int]], str]
    tokenizer_hash: str | None = None


def length_guard(examples: Sequence[Example], enc_max_len: int, dec_max_len: int,
                 ids: Sequence[int] | None = None) -> tuple[list[Example], list[int], int]:
    """Drop examples whose token sequences exceed the model's length limits."""
    ids = list(range(len(examples))) if ids is None else list(ids)
    kept, kept_ids = [], []
    for ex, i in zip(examples, ids):
        if len(ex[0]) <= enc_max_len and len(ex[1]) <= dec_max_len:
            kept.append(ex)
            kept_ids.append(i)
    return kept, kept_ids, len(examples) - len(kept)


def toy_data(cfg: ExperimentConfig, test_buckets: Sequence[str] = TEST_BUCKETS) -> TaskData:
    d = cfg.resolve().data
    codec = synthetic.SymbolCodec(d["n_symbols"])
    train_bucket = cfg.bucket

    def make(bucket: str, n: int, split: str):
        if bucket == "mix":
            return synthetic.make_mix(n, cfg.seed, split, codec, d["span"])
        return synthetic.make_bucket(bucket, n, cfg.seed, split, codec, d["span"])

    train = [(x.src, x.tgt) for x in make(train_bucket, d["n_train"], "train")]
    valid = [(x.src, x.tgt) for x in make(train_bucket, d["n_valid"], "valid")]
    tests = {}
    for b in test_buckets:
        items = make(b, d["n_test"], "test")
        tests[b] = TestSet(b, [(x.src, x.tgt) for x in items], [codec.decode(x.tgt[:-1]) for x in items],
                           [x.instance_id for x in items])
    return TaskData(train, valid, tests, codec.vocab_size, codec.decode)


def load_vocab(cfg: ExperimentConfig) -> Vocab:
    path = tokenizer_path(cfg)
    if not path.is_file():
        raise ExperimentError(f"tokenizer missing: {path} (run train-tokenizer first)")
    return Vocab.load(path)


def code_data(cfg: ExperimentConfig, test_buckets: Sequence[str] = TEST_BUCKETS,
              need_train: bool = True) -> TaskData:
    rcfg = cfg.resolve()
    vocab = load_vocab(cfg)
    enc_max, dec_max = rcfg.model["enc_max_len"], rcfg.model["dec_max_len"]

    def load(bucket: str, split: str) -> tuple[list[Example], list[str], list[int]]:
        path = dataset_dir(cfg) / f"{bucket}_{split}.jsonl"
        if not path.is_file():
            raise ExperimentError(f"dataset missing: {path} (run build-dataset first)")
        items = builder.read_dataset(path)
        examples = [(vocab.encode(x.input), vocab.encode(x.target) + [EOS_ID]) for x in items]
        kept, ids, dropped = length_guard(examples, enc_max, dec_max)
        if items and not kept:
            raise ExperimentError(f"{path.name}: all {len(items)} instances exceed enc_max_len={enc_max} / "
                                  f"dec_max_len={dec_max} tokens; raise the limits or the vocabulary size")
        if dropped:
            log.warning("%s: dropped %d of %d instances longer than enc_max_len=%d / dec_max_len=%d tokens",
                        path.name, dropped, len(items), enc_max, dec_max)
        return kept, [items[i].target for i in ids], ids

    train = load(cfg.bucket, "train")[0] if need_train else []
    valid = load(cfg.bucket, "valid")[0] if need_train else []
    tests = {}
    for b in test_buckets:
        ex, targets, ids = load(b, "test")
        tests[b] = TestSet(b, ex, targets, ids)
    return TaskData(train, valid, tests, len(vocab), vocab.decode, vocab.content_hash)


def task_data(cfg: ExperimentConfig, test_buckets: Sequence[str] = TEST_BUCKETS, need_train: bool = True) -> TaskData:
    if cfg.task == "toy":
        return toy_data(cfg, test_buckets)
    return code_data(cfg, test_buckets, need_train)


# ---------------------------------------------------------------- cells


def provenance(cfg: ExperimentConfig) -> dict:
    return {"config": cfg.resolve().to_dict(), "config_hash": cfg.config_hash(), "matrix_hash": cfg.matrix_hash()}


def is_trained(cfg: ExperimentConfig) -> bool:
    return (cell_dir(cfg) / "TRAINED").is_file()


def train_cell(cfg: ExperimentConfig, data: TaskData | None = None, resume: bool = False) -> ModelCheckpoint:
    """Train one (scheme, bucket) model. With ``resume`` a finished cell is never retrained."""
    out = cell_dir(cfg)
    if resume and is_trained(cfg):
        log.info("cell %s/%s already trained; skipping", cfg.scheme, cfg.bucket)
        return ModelCheckpoint.load(out / "best")
    data = data or task_data(cfg)
    if not data.train or not data.valid:
        raise ExperimentError(f"no training or validation data for bucket {cfg.bucket!r}")
    out.mkdir(parents=True, exist_ok=True)
    cfg.resolve().save(out / "config.json")
    model = build_model(cfg.model_config(data.vocab_size), seed=cfg.seed)
    start = None
    if resume and (out / "last" / "meta.json").is_file():
        start = ModelCheckpoint.load(out / "last")
        log.info("resuming %s/%s from epoch %d", cfg.scheme, cfg.bucket, start.epoch)
    meta = {**provenance(cfg), "tokenizer_hash": data.tokenizer_hash}
    t0 = time.time()
    result = fit(model, data.train, data.valid, cfg.train_config(), out_dir=out, resume=start, metadata=meta)
    elapsed = time.time() - t0
    (out / "TRAINED").write_text(json.dumps({"config_hash": cfg.config_hash(), "steps": result.best.step,
                                             "valid_loss": result.best.valid_loss, "seconds": elapsed}) + "\n")
    log.info("trained %s/%s in %.1fs (valid loss %.4f)", cfg.scheme, cfg.bucket, elapsed, result.best.valid_loss)
    return result.best


def load_best(cfg: ExperimentConfig) -> ModelCheckpoint:
    path = cell_dir(cfg) / "best"
    if not (path / "meta.json").is_file():
        raise ExperimentError(f"no trained checkpoint at {path} (run train first)")
    ckpt = ModelCheckpoint.load(path)
    if ckpt.experiment.get("config_hash") != cfg.config_hash():
        raise ExperimentError(f"checkpoint {path} was produced by a different configuration")
    return ckpt


def generate_cell(cfg: ExperimentConfig, ckpt: ModelCheckpoint, data: TaskData,
                  test_buckets: Sequence[str] = TEST_BUCKETS) -> dict[str, Path]:
    model = ckpt.to_model()
    gen = cfg.gen_config()
    paths = {}
    for b in test_buckets:
        ts = data.tests[b]
        outputs = generate_batch(model, [src for src, _ in ts.examples], gen, ts.instance_ids)
        records = [{"instance_id": i, "prediction": data.decode(o), "target": t, "bucket": b}
                   for i, o, t in zip(ts.instance_ids, outputs, ts.targets)]
        path = cell_dir(cfg) / f"predictions_{b}.jsonl"
        write_predictions(path, records)
        paths[b] = path
    return paths


def evaluate_cell(cfg: ExperimentConfig, ckpt: ModelCheckpoint, data: TaskData,
                  test_buckets: Sequence[str] = TEST_BUCKETS) -> dict[str, dict]:
    from .generator import read_predictions

    model = ckpt.to_model()
    out = {}
    for b in test_buckets:
        pred_path = cell_dir(cfg) / f"predictions_{b}.jsonl"
        if not pred_path.is_file():
            raise ExperimentError(f"predictions missing: {pred_path} (run generate first)")
        preds = read_predictions(pred_path)
        ce = cross_entropy(model, data.tests[b].examples)
        meta = {"scheme": cfg.scheme, "train_bucket": cfg.bucket, "test_bucket": b,
                "language": cfg.dataset_name, **provenance(cfg)}
        report = evaluate([p["prediction"] for p in preds], [p["target"] for p in preds], meta, ce)
        with open(cell_dir(cfg) / f"scores_{b}.jsonl", "w", encoding="utf-8") as fh:
            for p, r in zip(preds, report.records):
                fh.write(json.dumps({"instance_id": p["instance_id"], **{k: v for k, v in r.items() if k != "index"}})
                         + "\n")
        payload = {"metadata": report.metadata, "aggregates": report.aggregates, "n": len(preds)}
        (cell_dir(cfg) / f"eval_{b}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        out[b] = payload
    return out


def run_cell(cfg: ExperimentConfig, resume: bool = False) -> dict[str, dict]:
    """Train (unless finished and resuming), then generate and score every test bucket."""
    done = resume and all((cell_dir(cfg) / f"eval_{b}.json").is_file() for b in TEST_BUCKETS) and is_trained(cfg)
    if done:
        return {b: json.loads((cell_dir(cfg) / f"eval_{b}.json").read_text()) for b in TEST_BUCKETS}
    data = task_data(cfg, need_train=not (resume and is_trained(cfg)))
    ckpt = train_cell(cfg, data, resume=resume)
    generate_cell(cfg, ckpt, data)
    return evaluate_cell(cfg, ckpt, data)


# ---------------------------------------------------------------- matrix


def load_matrix(directory: str | Path, require_hash: str | None = None) -> tuple[GeneralizationMatrix, str]:
    """Collect eval_<test>.json files below a matrix directory.

    Raises ExperimentError when the files carry more than one matrix hash.
    """
    matrix = GeneralizationMatrix()
    hashes: set[str] = set()
    files = sorted(Path(directory).glob("*/*/eval_*.json"))
    if not files:
        raise ExperimentError(f"no evaluation files under {directory}")
    for path in files:
        payload = json.loads(path.read_text())
        meta = payload["metadata"]
        hashes.add(meta.get("matrix_hash", "?"))
        for metric, value in payload["aggregates"].items():
            matrix.set(meta["scheme"], meta["train_bucket"], meta["test_bucket"], metric, value)
    if len(hashes) > 1:
        raise ExperimentError(f"refusing to mix artifacts from configurations {sorted(hashes)}")
    (found,) = hashes
    if require_hash is not None and found != require_hash:
        raise ExperimentError(f"artifacts carry config hash {found}, expected {require_hash}")
    return matrix, found


def run_matrix(cfg: ExperimentConfig, resume: bool = False,
               on_cell: Callable[[str, str, dict], None] | None = None) -> GeneralizationMatrix:
    """Every scheme x train bucket: train once, evaluate on all three test buckets."""
    if cfg.task == "code":
        for path in (dataset_dir(cfg) / "manifest.json", tokenizer_path(cfg)):
            if not path.is_file():
                raise ExperimentError(f"missing {path}; run build-dataset and train-tokenizer first")
    matrix = GeneralizationMatrix()
    for scheme in cfg.schemes:
        for bucket in cfg.train_buckets:
            cell = cfg.for_cell(scheme, bucket)
            t0 = time.time()
            results = run_cell(cell, resume=resume)
            for test, payload in results.items():
                for metric, value in payload["aggregates"].items():
                    matrix.set(scheme, bucket, test, metric, value)
            log.info("cell %s/%s done in %.1fs: EM %s", scheme, bucket, time.time() - t0,
                     {t: round(p["aggregates"]["exact_match"], 2) for t, p in results.items()})
            if on_cell is not None:
                on_cell(scheme, bucket, results)
    return matrix


def train_bucket_em(matrix: GeneralizationMatrix, scheme: str, bucket: str) -> float:
    """EM on the training bucket's own test set (mix: mean over the three test buckets)."""
    if bucket == "mix":
        return float(np.mean([matrix.get(scheme, "mix", t, "exact_match") for t in TEST_BUCKETS]))
    return matrix.get(scheme, bucket, bucket, "exact_match")

