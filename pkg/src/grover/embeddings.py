"""Embedding table, word-vector text I/O, frequency ordering and maskers."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data import PAD_ID, SPECIAL_IDS, Vocabulary
from .errors import ConfigError, ContractViolation, InputError, ParseError

NOISE_DISTRIBUTIONS = ("uniform", "gaussian")


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    vocab: Vocabulary

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.vocab):
            raise InputError(f"table shape {self.matrix.shape} does not match |V|={len(self.vocab)}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.matrix.copy(), self.vocab)

    def row(self, token: str) -> np.ndarray:
        return self.matrix[self.vocab.stoi[token]]


@dataclass(frozen=True)
class Coverage:
    found: int
    missing: int
    file_tokens: int


def init_random(vocab: Vocabulary, dim: int = 300, seed: int = 0, dtype=np.float64) -> EmbeddingTable:
    """i.i.d. uniform in [-0.5, 0.5]; the padding row is zero."""
    if dim < 1:
        raise ConfigError("embedding dim must be >= 1")
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.5, 0.5, size=(len(vocab), dim)).astype(dtype)
    matrix[PAD_ID] = 0.0
    return EmbeddingTable(matrix, vocab)


def read_word_vectors(path, dim: int | None = None):
    """Parse the ``token v1 ... vd`` text format (optional ``count dim`` header).

    Returns ``(tokens, matrix)`` in file order.
    """
    path = os.fspath(path)
    tokens, rows = [], []
    header_count = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if parts and parts[-1] == "":
                parts = parts[:-1]
            if not parts or parts == [""]:
                continue
            if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                header_count, header_dim = int(parts[0]), int(parts[1])
                if dim is not None and header_dim != dim:
                    raise ConfigError(f"{path}: header dim {header_dim} != expected {dim}")
                dim = header_dim
                continue
            if len(parts) < 2:
                raise ParseError("expected a token followed by values", path, line_no)
            if dim is None:
                dim = len(parts) - 1
            if len(parts) - 1 != dim:
                if not rows and header_count is None:
                    raise ConfigError(f"{path}:{line_no}: vector has {len(parts) - 1} values, expected {dim}")
                raise ParseError(f"vector has {len(parts) - 1} values, expected {dim}", path, line_no)
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric vector value", path, line_no) from None
            tokens.append(parts[0])
    if header_count is not None and header_count != len(tokens):
        raise ParseError(f"header promises {header_count} vectors, file has {len(tokens)}", path)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim if dim is not None else 0)
    return tokens, matrix


def load_pretrained(path, vocab: Vocabulary, dim: int = 300, seed: int = 0):
    """Random table overwritten by file vectors for tokens present in both.

    Returns ``(table, coverage)``. Special rows are never taken from the file.
    """
    tokens, vectors = read_word_vectors(path, dim)
    if len(tokens) and vectors.shape[1] != dim:
        raise ConfigError(f"{path}: vectors have dim {vectors.shape[1]}, expected {dim}")
    table = init_random(vocab, dim, seed)
    found = set()
    for tok, vec in zip(tokens, vectors):
        idx = vocab.stoi.get(tok)
        if idx is None or idx in SPECIAL_IDS:
            continue
        table.matrix[idx] = vec
        found.add(idx)
    n_regular = len(vocab) - len(SPECIAL_IDS)
    return table, Coverage(found=len(found), missing=n_regular - len(found), file_tokens=len(tokens))


def save_table(table: EmbeddingTable, path) -> None:
    """Header + one row per id; ``repr`` floats round-trip bit-exactly."""
    path = os.fspath(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(table)} {table.dim}\n")
            for tok, row in zip(table.vocab.itos, table.matrix.tolist()):
                fh.write(tok + " " + " ".join(map(repr, row)) + "\n")
    except OSError as exc:
        raise OSError(f"could not write embedding table to {path}: {exc}") from exc


def load_table(path, vocab: Vocabulary | None = None) -> EmbeddingTable:
    """Inverse of :func:`save_table`.

    Without ``vocab`` the tokens in the file form a vocabulary with zero
    frequencies; with one, the file's token order must match it exactly.
    """
    path = os.fspath(path)
    try:
        tokens, matrix = read_word_vectors(path)
        with open(path, "rb") as fh:
            size = fh.seek(0, os.SEEK_END)
            fh.seek(max(size - 1, 0))
            last = fh.read(1)
        # save_table ends every row with a newline; anything else was cut off
        if size and last != b"\n":
            raise ParseError("file is truncated (no final newline)", path)
    except OSError as exc:
        raise OSError(f"could not read embedding table {path}: {exc}") from exc
    if vocab is None:
        vocab = Vocabulary(tokens, np.zeros(len(tokens), dtype=np.int64))
    elif tokens != vocab.itos:
        raise ParseError("token order does not match the vocabulary", path)
    return EmbeddingTable(matrix, vocab)


def frequency_order(vocab: Vocabulary) -> np.ndarray:
    """Non-special ids sorted by ascending frequency, ties by ascending id."""
    ids = np.arange(len(vocab))
    ids = ids[~np.isin(ids, SPECIAL_IDS)]
    return ids[np.argsort(vocab.frequency[ids], kind="stable")]


def apply_maskers(table: EmbeddingTable, mask_ids, noise_range: float, rng, distribution: str = "uniform") -> EmbeddingTable:
    """Return a copy with additive noise on the rows in ``mask_ids``.

    ``uniform`` draws each entry from U(-r, r); ``gaussian`` uses N(0, r^2).
    """
    if noise_range < 0:
        raise ConfigError("noise range must be >= 0")
    if distribution not in NOISE_DISTRIBUTIONS:
        raise ConfigError(f"unknown noise distribution {distribution!r}")
    mask_ids = np.asarray(sorted(set(int(i) for i in mask_ids)), dtype=np.int64)
    if np.isin(mask_ids, SPECIAL_IDS).any():
        raise ContractViolation("special ids (PAD/OOV) cannot be masked")
    if len(mask_ids) and (mask_ids.min() < 0 or mask_ids.max() >= len(table)):
        raise ContractViolation("mask id outside the vocabulary")
    out = table.copy()
    if len(mask_ids) == 0 or noise_range == 0:
        return out
    shape = (len(mask_ids), table.dim)
    if distribution == "uniform":
        noise = rng.uniform(-noise_range, noise_range, size=shape)
    else:
        noise = rng.normal(0.0, noise_range, size=shape)
    out.matrix[mask_ids] += noise.astype(out.matrix.dtype)
    return out
