"""End-to-end pipeline: data -> vocabulary -> embeddings -> GROVER -> outputs.

Shared by the command line, the scripts in ``scripts/`` and the acceptance
tests so that all three run exactly the same code path.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .analysis import emit_curves
from .controller import (
    GroverConfig,
    MetaEpochRecord,
    MetaRun,
    derive_seed,
    run_meta_training,
    save_checkpoint,
    write_report,
)
from .data import (
    Dataset,
    SyntheticSpec,
    build_vocab,
    generate_synthetic,
    load_corpus,
    make_dataset,
    split_train_val,
    tokenize,
)
from .embeddings import EmbeddingTable, init_random, load_pretrained, save_table
from .errors import ConfigError
from .nn import ClassifierConfig

log = logging.getLogger(__name__)

# Desk-scale benchmark corpus: 4 classes, 500-word Zipf
# vocabulary, 2400 training documents of which 400 go to validation, 400 test.
STANDARD_SPEC = SyntheticSpec(
    classes=4,
    vocab_size=500,
    docs_per_class=600,
    test_docs_per_class=100,
    signal=0.04,
    seed=2019,
    doc_len=80,
    keywords_per_class=10,
)
STANDARD_VAL_FRACTION = 400 / 2400


def standard_config(**overrides) -> "RunConfig":
    """The small TextCNN setting used for the direction experiments on ``STANDARD_SPEC``."""
    base = dict(synthetic="standard", embedding_dim=32, seq_len=STANDARD_SPEC.doc_len,
                val_fraction=STANDARD_VAL_FRACTION, seed=0)
    base.update(overrides)
    return RunConfig(**base)


@dataclass
class RunConfig:
    out: str | None = None
    data: str | None = None
    test: str | None = None
    synthetic: str | None = None
    embeddings: str = "random"
    embedding_dim: int = 300
    seq_len: int = 100
    model: str = "textcnn"
    dropout: float = 0.0
    word_drop: float = 0.0
    step_size: float = 0.1
    noise_range: float = 1.0
    policy: str = "gradual"
    noise_distribution: str = "uniform"
    max_meta_epochs: int = 64
    patience: int = 3
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    val_fraction: float = 0.15
    meta_val_fraction: float = 0.0
    seed: int = 0
    dtype: str = "float32"

    def validate(self, need_out: bool = True) -> None:
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError("exactly one data source is required: --data or --synthetic")
        if self.test is not None and self.data is None:
            raise ConfigError("--test only applies together with --data")
        if need_out and not self.out:
            raise ConfigError("an output directory (--out) is required")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.grover_config()

    def grover_config(self, seed: int | None = None) -> GroverConfig:
        return GroverConfig(
            step_size=self.step_size,
            noise_range=self.noise_range,
            policy=self.policy,
            max_epochs=self.epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            seed=self.seed if seed is None else seed,
            max_meta_epochs=self.max_meta_epochs,
            lr=self.lr,
            word_drop_p=self.word_drop,
            noise_distribution=self.noise_distribution,
        )

    def classifier_config(self, num_classes: int) -> ClassifierConfig:
        return ClassifierConfig(
            num_classes=num_classes,
            embedding_dim=self.embedding_dim,
            seq_len=self.seq_len,
            dropout_p=self.dropout,
            model_kind=self.model,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.field_names())
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


def parse_synthetic(text: str) -> SyntheticSpec:
    """Accept a JSON file path or an inline ``key=value,key=value`` string."""
    if os.path.isfile(text):
        with open(text, encoding="utf-8") as fh:
            d = json.load(fh)
    elif text.strip() in ("", "standard"):
        return STANDARD_SPEC
    else:
        d = {}
        for item in text.split(","):
            if "=" not in item:
                raise ConfigError(f"bad synthetic spec item {item!r}; expected key=value")
            key, value = (s.strip() for s in item.split("=", 1))
            d[key] = value
    names = {f.name: f.type for f in fields(SyntheticSpec)}
    base = asdict(STANDARD_SPEC)
    for key, value in d.items():
        if key not in names:
            raise ConfigError(f"unknown synthetic spec key {key!r}; expected one of {sorted(names)}")
        base[key] = float(value) if names[key] == "float" else int(value)
    return SyntheticSpec(**base)


def prepare_data(cfg: RunConfig):
    """Load or synthesize the corpus, split validation, build the vocabulary.

    Returns ``(vocab, train, val, test, meta_val)``. Frequencies come from the
    post-split training part only.
    """
    if cfg.synthetic is not None:
        train_rows, test_rows = generate_synthetic(parse_synthetic(cfg.synthetic))
    else:
        train_rows = load_corpus(cfg.data)
        test_rows = load_corpus(cfg.test) if cfg.test else None
    train_rows, val_rows = split_train_val(train_rows, cfg.val_fraction, seed=derive_seed(cfg.seed, 101))
    meta_rows = None
    if cfg.meta_val_fraction > 0:
        val_rows, meta_rows = split_train_val(val_rows, cfg.meta_val_fraction, seed=derive_seed(cfg.seed, 102))

    train_tokens = [tokenize(text) for _, text in train_rows]
    vocab = build_vocab(train_tokens)
    all_labels = [label for label, _ in train_rows + val_rows + (test_rows or []) + (meta_rows or [])]
    num_classes = max(2, max(all_labels) + 1)

    def ds(rows, split):
        return make_dataset(rows, vocab, cfg.seq_len, num_classes, split) if rows is not None else None

    train = make_dataset(list(zip((l for l, _ in train_rows), train_tokens)), vocab, cfg.seq_len, num_classes, "train")
    return vocab, train, ds(val_rows, "val"), ds(test_rows, "test"), ds(meta_rows, "meta_val")


def initial_embeddings(cfg: RunConfig, vocab, seed: int | None = None) -> EmbeddingTable:
    seed = cfg.seed if seed is None else seed
    dtype = np.dtype(cfg.dtype)
    if cfg.embeddings == "random":
        return init_random(vocab, cfg.embedding_dim, seed=derive_seed(seed, 103), dtype=dtype)
    table, cov = load_pretrained(cfg.embeddings, vocab, cfg.embedding_dim, seed=derive_seed(seed, 103))
    log.info("pretrained coverage: %d found, %d missing", cov.found, cov.missing)
    table.matrix = table.matrix.astype(dtype)
    return table


def run(cfg: RunConfig, data=None, seed: int | None = None, on_record=None):
    """One full GROVER run. Returns ``(MetaRun, initial_table)``."""
    vocab, train, val, test, meta_val = data if data is not None else prepare_data(cfg)
    num_classes = train.num_classes
    table = initial_embeddings(cfg, vocab, seed)
    result = run_meta_training(
        train, val, table, cfg.classifier_config(num_classes), cfg.grover_config(seed),
        test=test, meta_val=meta_val, on_record=on_record,
    )
    return result, table


def summary_line(result: MetaRun) -> str:
    """Baseline (meta-epoch 0) versus the best GROVER checkpoint, with the delta in points."""
    base = result.records[0]
    best = result.best.record
    key = "test_acc" if base.test_acc is not None else "val_acc"
    b, g = getattr(base, key) * 100, getattr(best, key) * 100
    return (
        f"baseline {key}={b:.2f} grover {key}={g:.2f} delta {g - b:+.2f} "
        f"(best meta-epoch {best.meta_epoch} of {len(result.records)})"
    )


def record_line(rec: MetaEpochRecord) -> str:
    test = "-" if rec.test_acc is None else f"{rec.test_acc:.4f}"
    return (
        f"meta={rec.meta_epoch} mask=[{rec.mask_start},{rec.mask_end}) inner_epochs={rec.inner_epochs} "
        f"val={rec.val_acc:.4f} test={test} accepted={int(rec.accepted)} max={rec.max_acc:.4f}"
    )


def write_outputs(out_dir, cfg: RunConfig, result: MetaRun, initial: EmbeddingTable) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.best, out / "checkpoint")
    save_table(initial, out / "checkpoint" / "initial.txt")
    write_report(result.records, out / "report.jsonl")
    emit_curves(result.records, out / "curves.csv")
    with open(out / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(summary_line(result) + "\n")


def write_effective_config(out_dir, cfg: RunConfig) -> None:
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    with open(Path(out_dir) / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


class SweepRunner:
    """Picklable ``run_fn`` for :func:`grover.analysis.run_sweep`."""

    def __init__(self, cfg: RunConfig, data=None):
        self.cfg = cfg
        self.data = data if data is not None else prepare_data(cfg)
        if self.data[3] is None:
            raise ConfigError("sweeps report test accuracy; supply --test or use --synthetic")

    def __call__(self, point: dict, seed: int):
        cfg = replace(self.cfg, **point)
        result, _ = run(cfg, self.data, seed=seed)
        return result.records[0].test_acc, result.best.record.test_acc
