"""Corpus ingestion: tokenization, vocabulary, splitting, encoding, word dropping,
CSV I/O and a Zipf-background synthetic corpus generator."""
from __future__ import annotations

import csv
import io
import math
import os
import re
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputError, ParseError

PAD, OOV = "<pad>", "<oov>"
PAD_ID, OOV_ID = 0, 1
SPECIAL_IDS = (PAD_ID, OOV_ID)

_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, map every non-alphanumeric character to a space, split."""
    return _NON_ALNUM.sub(" ", text.lower()).split()


@dataclass
class Vocabulary:
    itos: list[str]
    frequency: np.ndarray
    stoi: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.frequency = np.asarray(self.frequency, dtype=np.int64)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise InputError("duplicate tokens in vocabulary")
        if self.itos[:2] != [PAD, OOV]:
            raise InputError(f"vocabulary must start with {PAD!r}, {OOV!r}")
        if self.frequency.shape != (len(self.itos),):
            raise InputError("frequency length does not match vocabulary size")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, OOV_ID)

    def is_special(self, idx: int) -> bool:
        return idx in SPECIAL_IDS

    def to_dict(self) -> dict:
        return {"itos": list(self.itos), "frequency": self.frequency.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(list(d["itos"]), d["frequency"])


def build_vocab(train_texts) -> Vocabulary:
    """Ids follow first-occurrence order after the specials; counts are exact.

    ``train_texts`` may hold raw strings or pre-tokenized lists.
    """
    counts: Counter = Counter()
    order: dict[str, None] = {}
    n_docs = 0
    for doc in train_texts:
        n_docs += 1
        tokens = tokenize(doc) if isinstance(doc, str) else doc
        counts.update(tokens)
        for tok in tokens:
            order.setdefault(tok, None)
    if n_docs == 0:
        raise InputError("cannot build a vocabulary from an empty corpus")
    itos = [PAD, OOV] + [t for t in order if t not in (PAD, OOV)]
    freq = [0, 0] + [counts[t] for t in itos[2:]]
    return Vocabulary(itos, freq)


def split_train_val(examples, fraction: float = 0.15, seed: int = 0):
    """Seeded shuffle, then the first ``round(fraction * N)`` go to validation."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"validation fraction must lie in (0, 1), got {fraction}")
    examples = list(examples)
    n = len(examples)
    if n < 2:
        raise InputError("need at least 2 examples to split")
    n_val = int(math.floor(fraction * n + 0.5))
    if n_val == 0 or n_val == n:
        raise InputError(f"split of {n} examples at {fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    val = [examples[i] for i in perm[:n_val]]
    train = [examples[i] for i in perm[n_val:]]
    return train, val


def encode(tokens, vocab: Vocabulary, seq_len: int) -> np.ndarray:
    """Map tokens to ids (OOV for unknown), truncate to ``seq_len``, right-pad with PAD."""
    out = np.full(seq_len, PAD_ID, dtype=np.int64)
    ids = [vocab.id(t) for t in tokens[:seq_len]]
    out[: len(ids)] = ids
    return out


def pad_ids(ids, seq_len: int) -> np.ndarray:
    out = np.full(seq_len, PAD_ID, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)[:seq_len]
    out[: len(ids)] = ids
    return out


def word_drop(tokens, p: float = 0.1, rng=None):
    """Remove each token independently with probability ``p``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"word drop probability must lie in [0, 1), got {p}")
    if p == 0.0 or len(tokens) == 0:
        return tokens[:] if isinstance(tokens, list) else tokens.copy()
    keep = rng.random(len(tokens)) >= p
    if isinstance(tokens, np.ndarray):
        return tokens[keep]
    return [t for t, k in zip(tokens, keep) if k]


@dataclass
class Dataset:
    """Encoded examples. ``full_ids`` keeps the untruncated id sequences so
    word dropping can be re-applied before truncation each epoch."""

    ids: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    full_ids: list | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids.ndim != 2 or len(self.ids) != len(self.labels):
            raise InputError("ids must be N x seq_len with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"label outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def seq_len(self) -> int:
        return self.ids.shape[1]

    @property
    def examples(self) -> list[tuple[np.ndarray, int]]:
        return list(zip(self.ids, self.labels.tolist()))


def make_dataset(labeled_texts, vocab: Vocabulary, seq_len: int, num_classes: int, split: str = "train") -> Dataset:
    full, labels = [], []
    for label, text in labeled_texts:
        toks = tokenize(text) if isinstance(text, str) else text
        full.append(np.array([vocab.id(t) for t in toks], dtype=np.int64))
        labels.append(label)
    ids = np.stack([pad_ids(f, seq_len) for f in full]) if full else np.zeros((0, seq_len), np.int64)
    return Dataset(ids, np.array(labels, dtype=np.int64), num_classes, split, full)


# --------------------------------------------------------------------- CSV I/O


def load_corpus(path, format: str = "csv", num_classes: int | None = None) -> list[tuple[int, str]]:
    """Read ``label,text`` rows. Labels are 0-based ints; quoted text may contain commas."""
    if format != "csv":
        raise ConfigError(f"unsupported corpus format {format!r}")
    path = os.fspath(path)
    with open(path, encoding="utf-8", newline="") as fh:
        content = fh.read()
    rows = []
    reader = csv.reader(io.StringIO(content))
    while True:
        line_no = reader.line_num + 1
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            raise ParseError(str(exc), path, line_no) from None
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields (label,text), got {len(row)}", path, line_no)
        try:
            label = int(row[0])
        except ValueError:
            raise ParseError(f"label {row[0]!r} is not an integer", path, line_no) from None
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise InputError(f"{path}:{line_no}: unknown label id {label}")
        rows.append((label, row[1]))
    return rows


def write_corpus(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for label, text in rows:
            writer.writerow([int(label), text])


# ------------------------------------------------------------------ synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 4
    vocab_size: int = 500
    docs_per_class: int = 500
    signal: float = 0.1
    seed: int = 0
    test_docs_per_class: int = 100
    doc_len: int = 80
    keywords_per_class: int = 10
    zipf_exponent: float = 1.0

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.vocab_size < self.classes * max(self.keywords_per_class, 1):
            raise ConfigError(
                f"vocab_size {self.vocab_size} cannot hold {self.keywords_per_class} keywords "
                f"for each of {self.classes} classes"
            )
        if not 0.0 <= self.signal <= 1.0:
            raise ConfigError("signal must lie in [0, 1]")
        if self.docs_per_class < 1 or self.doc_len < 1 or self.test_docs_per_class < 0:
            raise ConfigError("document counts and lengths must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def synthetic_token(rank: int) -> str:
    return f"w{rank:05d}"


def zipf_probs(spec: SyntheticSpec) -> np.ndarray:
    w = 1.0 / np.arange(1, spec.vocab_size + 1) ** spec.zipf_exponent
    return w / w.sum()


def keyword_ranks(spec: SyntheticSpec) -> np.ndarray:
    """``classes x keywords_per_class`` Zipf ranks, interleaved across the
    upper-middle of the rank range so every class gets a mix of frequencies."""
    n = spec.classes * spec.keywords_per_class
    lo = spec.vocab_size // 10
    ranks = np.linspace(lo, spec.vocab_size - 1, n).round().astype(int)
    ranks = np.unique(ranks)
    if len(ranks) < n:
        ranks = np.arange(spec.vocab_size - n, spec.vocab_size)
    return ranks.reshape(spec.keywords_per_class, spec.classes).T


def generate_synthetic(spec: SyntheticSpec):
    """Return ``(train, test)`` lists of ``(label, text)``, classes interleaved.

    Each token is a class keyword with probability ``signal`` and a Zipf
    background token otherwise, so frequency rank follows the ``w#####`` index.
    """
    rng = np.random.default_rng(spec.seed)
    probs = zipf_probs(spec)
    kw = keyword_ranks(spec)

    def sample(n_per_class):
        docs = []
        for _ in range(n_per_class):
            for c in range(spec.classes):
                background = rng.choice(spec.vocab_size, size=spec.doc_len, p=probs)
                is_kw = rng.random(spec.doc_len) < spec.signal
                keywords = kw[c][rng.integers(0, kw.shape[1], size=spec.doc_len)]
                ranks = np.where(is_kw, keywords, background)
                docs.append((c, " ".join(synthetic_token(r) for r in ranks)))
        return docs

    train = sample(spec.docs_per_class)
    test = sample(spec.test_docs_per_class)
    return train, test
