"""GROVER meta-training loop.

Each meta-epoch retrains a freshly initialised classifier on the carried
embedding table. After meta-validation the fine-tuned table is adopted only if
accuracy strictly improved; otherwise the previous table is kept (rollback).
Maskers then add uniform noise to a window of the vocabulary that walks from
the least to the most frequent words, and the loop stops once every regular
word has been masked at least once.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .data import Dataset, Vocabulary, pad_ids, word_drop
from .embeddings import EmbeddingTable, apply_maskers, frequency_order, load_table, save_table
from .errors import ConfigError, ContractViolation, ManifestMismatch, ParseError, TrainingDiverged
from .nn import AdamState, ClassifierConfig, ClassifierParams, accuracy, adam_step, forward, init_params, loss_and_grad

log = logging.getLogger(__name__)

POLICIES = ("gradual", "none", "reversed", "both")


@dataclass(frozen=True)
class GroverConfig:
    step_size: float = 0.1
    noise_range: float = 1.0
    policy: str = "gradual"
    max_epochs: int = 20
    patience: int = 3
    batch_size: int = 64
    seed: int = 0
    max_meta_epochs: int = 64
    lr: float = 1e-3
    word_drop_p: float = 0.0
    noise_distribution: str = "uniform"

    def __post_init__(self):
        if not 0.0 < self.step_size <= 1.0:
            raise ConfigError(f"step_size must lie in (0, 1], got {self.step_size}")
        if self.noise_range < 0:
            raise ConfigError("noise_range must be >= 0")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if min(self.max_epochs, self.patience, self.batch_size, self.max_meta_epochs) < 1:
            raise ConfigError("max_epochs, patience, batch_size and max_meta_epochs must be >= 1")
        if not 0.0 <= self.word_drop_p < 1.0:
            raise ConfigError("word_drop_p must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def derive_seed(master: int, *keys: int) -> int:
    """Independent, reproducible 32-bit seed for ``(master, *keys)``."""
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


def stable_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


# ------------------------------------------------------------------ inner loop


class EarlyStopping:
    """Track the best validation accuracy; stop after ``patience`` epochs without a strict gain."""

    def __init__(self, patience: int = 3):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.state = None

    def update(self, epoch: int, value: float, snapshot: Callable[[], object] | None = None) -> bool:
        """Record ``value`` for ``epoch`` (1-based); return True when training should stop."""
        if value > self.best:
            self.best, self.best_epoch = value, epoch
            if snapshot is not None:
                self.state = snapshot()
            return False
        return epoch - self.best_epoch >= self.patience


@dataclass
class TrainResult:
    params: ClassifierParams | None
    embeddings: EmbeddingTable
    best_val_acc: float
    epochs_run: int = 0
    best_epoch: int = 0
    diverged: bool = False
    history: list = field(default_factory=list)


def _epoch_ids(train: Dataset, p: float, rng) -> np.ndarray:
    if p == 0.0 or train.full_ids is None:
        return train.ids
    return np.stack([pad_ids(word_drop(f, p, rng), train.seq_len) for f in train.full_ids])


def train_once(seed: int, embeddings: EmbeddingTable, train: Dataset, val: Dataset,
               classifier: ClassifierConfig, config: GroverConfig) -> TrainResult:
    """Train a fresh classifier on a copy of ``embeddings`` with early stopping.

    Returns the params and table from the best validation epoch.
    """
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("train and validation sets must be non-empty")
    init_seed, shuffle_seed, drop_seed, word_seed = (derive_seed(seed, i) for i in range(4))
    params = init_params(classifier, init_seed, dtype=embeddings.matrix.dtype)
    table = embeddings.copy()
    adam = AdamState.fresh(params, table, lr=config.lr)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(drop_seed)
    word_rng = np.random.default_rng(word_seed)

    stopper = EarlyStopping(config.patience)
    stopper.best = accuracy(params, table, val.ids, val.labels)
    stopper.state = (params.copy(), table.copy())
    history = []
    diverged = False
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        ids = _epoch_ids(train, config.word_drop_p, word_rng)
        order = shuffle_rng.permutation(len(train))
        losses = []
        try:
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                logits, tape = forward(params, table, ids[idx], train_mode=True, rng=dropout_rng)
                loss, grads = loss_and_grad(logits, train.labels[idx], tape, params, table)
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"loss became {loss} at epoch {epoch}")
                adam_step(params, table, grads, adam)
                losses.append(loss)
        except TrainingDiverged as exc:
            log.warning("inner run diverged: %s", exc)
            diverged = True
            break
        val_acc = accuracy(params, table, val.ids, val.labels)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_acc": val_acc})
        if stopper.update(epoch, val_acc, lambda: (params.copy(), table.copy())):
            break

    best_params, best_table = stopper.state
    return TrainResult(best_params, best_table, stopper.best, epoch, stopper.best_epoch, diverged, history)


# --------------------------------------------------------------------- maskers


@dataclass(frozen=True)
class MaskerState:
    """Masked positions are always the contiguous range ``[mask_start, frontier)``
    of the frequency order; ``window`` is the slice added by the last advance."""

    frontier: int = 0
    mask_start: int = 0
    window_start: int = 0
    window_end: int = 0

    def mask_positions(self) -> range:
        return range(self.mask_start, self.frontier)

    def mask_ids(self, order: np.ndarray) -> np.ndarray:
        return np.asarray(order)[self.mask_start : self.frontier]


def window_size(n_words: int, step_size: float) -> int:
    # round() guards against e.g. 0.07 * 100 == 7.000000000000001
    return max(1, math.ceil(round(step_size * n_words, 9)))


def advance_maskers(state: MaskerState, improved: bool, order, step_size: float, policy: str) -> MaskerState:
    """Consume the next window of the frequency order and pick the new mask.

    Policy on (improved, not improved): ``gradual`` window / previous+window,
    ``none`` window / window, ``reversed`` previous+window / window,
    ``both`` previous+window / previous+window.
    """
    n = len(order)
    if state.frontier >= n:
        raise ContractViolation("every word has already been masked")
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}")
    start = state.frontier
    end = min(start + window_size(n, step_size), n)
    extend = {
        "gradual": not improved,
        "none": False,
        "reversed": improved,
        "both": True,
    }[policy]
    mask_start = state.mask_start if extend else start
    return MaskerState(frontier=end, mask_start=mask_start, window_start=start, window_end=end)


# ------------------------------------------------------------------ meta loop


@dataclass
class MetaEpochRecord:
    meta_epoch: int
    mask_start: int
    mask_end: int
    window_start: int
    window_end: int
    masked_words: int
    inner_epochs: int
    best_inner_val_acc: float
    val_acc: float
    max_acc: float
    accepted: bool
    test_acc: float | None
    diverged: bool
    model_seed: int
    noise_seed: int | None
    wall_time: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d


@dataclass
class Checkpoint:
    params: ClassifierParams | None
    embeddings: EmbeddingTable
    record: MetaEpochRecord
    classifier: ClassifierConfig
    config: GroverConfig
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.manifest:
            self.manifest = make_manifest(self.classifier, self.config, self.embeddings.vocab)


class MetaRun(NamedTuple):
    best: Checkpoint
    records: list[MetaEpochRecord]
    cap_reached: bool


def config_hash(classifier: ClassifierConfig, config: GroverConfig) -> str:
    return stable_hash({"classifier": classifier.to_dict(), "grover": config.to_dict()})


def vocab_hash(vocab: Vocabulary) -> str:
    return stable_hash(vocab.to_dict())


def make_manifest(classifier: ClassifierConfig, config: GroverConfig, vocab: Vocabulary) -> dict:
    return {"config_hash": config_hash(classifier, config), "vocab_hash": vocab_hash(vocab)}


def default_evaluator(result: TrainResult, dataset: Dataset) -> float:
    return accuracy(result.params, result.embeddings, dataset.ids, dataset.labels)


def run_meta_training(train: Dataset, val: Dataset, initial: EmbeddingTable,
                      classifier: ClassifierConfig, config: GroverConfig,
                      test: Dataset | None = None, meta_val: Dataset | None = None,
                      trainer=train_once, evaluator=default_evaluator,
                      on_record: Callable[[MetaEpochRecord], None] | None = None) -> MetaRun:
    """Run the full GROVER loop and return the best checkpoint plus every record.

    ``meta_val`` switches meta-level validation to a separate split; by
    default the inner early-stopping set ``val`` is used for both.
    ``trainer`` and ``evaluator`` are injectable for stubbed traces.
    """
    order = frequency_order(initial.vocab)
    meta_set = val if meta_val is None else meta_val
    carried = initial
    seeded = initial
    state = MaskerState()
    noise_seed = None
    max_acc = -math.inf
    best: Checkpoint | None = None
    records: list[MetaEpochRecord] = []
    cap_reached = False

    k = 0
    while True:
        t0 = time.perf_counter()
        model_seed = derive_seed(config.seed, k, 0)
        result = trainer(model_seed, seeded, train, val, classifier, config)
        acc = evaluator(result, meta_set)
        improved = acc > max_acc
        if improved:
            max_acc = acc
            carried = result.embeddings
        test_acc = evaluator(result, test) if test is not None else None
        rec = MetaEpochRecord(
            meta_epoch=k,
            mask_start=state.mask_start,
            mask_end=state.frontier,
            window_start=state.window_start,
            window_end=state.window_end,
            masked_words=state.frontier - state.mask_start,
            inner_epochs=result.epochs_run,
            best_inner_val_acc=result.best_val_acc,
            val_acc=acc,
            max_acc=max_acc,
            accepted=improved,
            test_acc=test_acc,
            diverged=result.diverged,
            model_seed=model_seed,
            noise_seed=noise_seed,
            wall_time=time.perf_counter() - t0,
        )
        records.append(rec)
        if improved:
            best = Checkpoint(result.params, result.embeddings, rec, classifier, config)
        if on_record is not None:
            on_record(rec)

        if state.frontier >= len(order):
            break
        if k + 1 >= config.max_meta_epochs:
            cap_reached = True
            warnings.warn(
                f"meta-epoch cap {config.max_meta_epochs} reached with "
                f"{len(order) - state.frontier} words never masked",
                RuntimeWarning,
                stacklevel=2,
            )
            break
        state = advance_maskers(state, improved, order, config.step_size, config.policy)
        noise_seed = derive_seed(config.seed, k + 1, 1)
        seeded = apply_maskers(
            carried, state.mask_ids(order), config.noise_range,
            np.random.default_rng(noise_seed), config.noise_distribution,
        )
        k += 1

    if best is None:
        # only reachable when every Acc is -inf or NaN
        best = Checkpoint(result.params, result.embeddings, records[0], classifier, config)
    return MetaRun(best, records, cap_reached)


def expected_meta_epochs(n_words: int, step_size: float) -> int:
    """1 unmasked run plus one run per window of the frequency order."""
    if n_words == 0:
        return 1
    return 1 + math.ceil(n_words / window_size(n_words, step_size))


# ----------------------------------------------------------------- persistence


def write_report(records, path, timing: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(timing), sort_keys=True) + "\n")


def read_report(path) -> list[MetaEpochRecord]:
    with open(path, encoding="utf-8") as fh:
        return [MetaEpochRecord(**json.loads(line)) for line in fh if line.strip()]


def save_checkpoint(ckpt: Checkpoint, directory) -> None:
    """Write ``manifest.json``, ``vocab.json``, ``embeddings.txt`` and ``params.bin``.

    ``params.bin`` is every classifier array flattened (float64, little
    endian) in manifest order.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    shapes = []
    if ckpt.params is not None:
        flat = []
        for name, arr in ckpt.params.arrays.items():
            shapes.append([name, list(arr.shape)])
            flat.append(np.asarray(arr, dtype="<f8").ravel())
        np.concatenate(flat).tofile(d / "params.bin")
    save_table(ckpt.embeddings, d / "embeddings.txt")
    with open(d / "vocab.json", "w", encoding="utf-8") as fh:
        json.dump(ckpt.embeddings.vocab.to_dict(), fh)
    manifest = {
        **ckpt.manifest,
        "classifier": ckpt.classifier.to_dict(),
        "grover": ckpt.config.to_dict(),
        "record": ckpt.record.to_dict(timing=False),
        "param_shapes": shapes,
        "param_dtype": str(next(iter(ckpt.params.arrays.values())).dtype) if ckpt.params else None,
    }
    with open(d / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(directory, expected_manifest: dict | None = None) -> Checkpoint:
    """Load and verify a checkpoint.

    The stored hashes must match the stored config/vocab, and
    ``expected_manifest`` (if given) must match the stored hashes.
    """
    d = Path(directory)
    if not (d / "manifest.json").is_file():
        raise FileNotFoundError(f"no checkpoint manifest in {d}")
    with open(d / "manifest.json", encoding="utf-8") as fh:
        man = json.load(fh)
    with open(d / "vocab.json", encoding="utf-8") as fh:
        vocab = Vocabulary.from_dict(json.load(fh))
    classifier = ClassifierConfig.from_dict(man["classifier"])
    config = GroverConfig(**man["grover"])
    computed = make_manifest(classifier, config, vocab)
    for key, value in computed.items():
        if man.get(key) != value:
            raise ManifestMismatch(f"{d}: {key} in manifest does not match the stored contents")
        if expected_manifest is not None and expected_manifest.get(key) != value:
            raise ManifestMismatch(f"{d}: {key} does not match the current run")
    table = load_table(d / "embeddings.txt", vocab)
    if man["param_dtype"]:
        table.matrix = table.matrix.astype(man["param_dtype"])
    params = None
    if man["param_shapes"]:
        flat = np.fromfile(d / "params.bin", dtype="<f8")
        total = sum(int(np.prod(s)) for _, s in man["param_shapes"])
        if flat.size != total:
            raise ParseError(f"params.bin holds {flat.size} values, manifest expects {total}", d / "params.bin")
        arrays, pos = {}, 0
        for name, shape in man["param_shapes"]:
            n = int(np.prod(shape))
            arrays[name] = flat[pos : pos + n].reshape(shape).astype(man["param_dtype"])
            pos += n
        params = ClassifierParams(classifier, arrays)
        params.audit()
    record = MetaEpochRecord(**man["record"])
    manifest = {k: man[k] for k in computed}
    return Checkpoint(params, table, record, classifier, config, manifest)

