"""Embedding inspection and experiment reporting."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .controller import derive_seed
from .data import SPECIAL_IDS
from .embeddings import EmbeddingTable
from .errors import InputError

log = logging.getLogger(__name__)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise InputError("cosine similarity is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass
class NeighborReport:
    cue: str
    neighbors: list[tuple[str, float]]

    def format(self, digits: int = 4) -> str:
        """``cue: tok(.5958),tok(.5925),...`` with the leading zero dropped."""
        def fmt(s):
            text = f"{s:.{digits}f}"
            return text.replace("0.", ".", 1) if text.startswith("0.") else text.replace("-0.", "-.", 1)

        return f"{self.cue}: " + ",".join(f"{t}({fmt(s)})" for t, s in self.neighbors)


def _candidate_ids(table: EmbeddingTable, cue_id: int) -> np.ndarray:
    ids = np.arange(len(table))
    return ids[~np.isin(ids, (*SPECIAL_IDS, cue_id))]


def nearest_neighbors(table: EmbeddingTable, cue: str, k: int = 20) -> NeighborReport:
    """Exact top-``k`` by cosine similarity; ties by ascending id.

    Special tokens and the cue are excluded. Zero rows score 0.
    """
    vocab = table.vocab
    if cue not in vocab:
        raise InputError(f"cue {cue!r} is not in the vocabulary")
    cue_id = vocab.stoi[cue]
    if cue_id in SPECIAL_IDS:
        raise InputError(f"cue {cue!r} is a special token")
    cand = _candidate_ids(table, cue_id)
    if not 1 <= k <= len(cand):
        raise InputError(f"k must lie in [1, {len(cand)}], got {k}")
    M = table.matrix.astype(np.float64)
    u = M[cue_id]
    nu = np.linalg.norm(u)
    if nu == 0:
        raise InputError(f"cue {cue!r} has a zero vector")
    rows = M[cand]
    norms = np.linalg.norm(rows, axis=1)
    sims = np.zeros(len(cand))
    nz = norms > 0
    # elementwise product + row sum: identical rows must score identically, which BLAS gemv does not promise
    sims[nz] = (rows[nz] * u).sum(axis=1) / (norms[nz] * nu)
    sims = np.clip(sims, -1.0, 1.0)
    top = np.lexsort((cand, -sims))[:k]
    return NeighborReport(cue, [(vocab.itos[cand[i]], float(sims[i])) for i in top])


def neighbor_churn(table_a: EmbeddingTable, table_b: EmbeddingTable, cue: str, k: int = 20) -> float:
    """Jaccard overlap of the top-``k`` neighbor sets of ``cue`` in two tables."""
    a = {t for t, _ in nearest_neighbors(table_a, cue, k).neighbors}
    b = {t for t, _ in nearest_neighbors(table_b, cue, k).neighbors}
    return len(a & b) / len(a | b)


@dataclass
class DriftReport:
    ids: np.ndarray
    euclidean: np.ndarray
    cosine: np.ndarray

    @property
    def mean_euclidean(self) -> float:
        return float(self.euclidean.mean()) if len(self.ids) else 0.0

    @property
    def median_euclidean(self) -> float:
        return float(np.median(self.euclidean)) if len(self.ids) else 0.0

    @property
    def mean_cosine(self) -> float:
        return float(np.nanmean(self.cosine)) if len(self.ids) else 1.0

    def summary(self) -> dict:
        return {
            "words": int(len(self.ids)),
            "mean_euclidean": self.mean_euclidean,
            "median_euclidean": self.median_euclidean,
            "mean_cosine_to_former_self": self.mean_cosine,
        }


def embedding_drift(table_a: EmbeddingTable, table_b: EmbeddingTable, ids=None) -> DriftReport:
    """Per-word Euclidean distance and cosine similarity between two tables.

    Defaults to every non-special id. Cosine is NaN where either row is zero.
    """
    if table_a.matrix.shape != table_b.matrix.shape:
        raise InputError(f"table shapes differ: {table_a.matrix.shape} vs {table_b.matrix.shape}")
    if ids is None:
        ids = np.arange(len(table_a))
        ids = ids[~np.isin(ids, SPECIAL_IDS)]
    ids = np.asarray(ids, dtype=np.int64)
    A = table_a.matrix[ids].astype(np.float64)
    B = table_b.matrix[ids].astype(np.float64)
    euclid = np.linalg.norm(B - A, axis=1)
    na, nb = np.linalg.norm(A, axis=1), np.linalg.norm(B, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where((na > 0) & (nb > 0), (A * B).sum(axis=1) / (na * nb), np.nan)
    return DriftReport(ids, euclid, np.clip(cos, -1.0, 1.0))


# --------------------------------------------------------------------- curves


def emit_curves(records, path) -> None:
    """CSV ``meta_epoch,val_acc,test_acc``; an absent test accuracy is left blank."""
    if not records:
        raise InputError("no meta-epoch records to write")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["meta_epoch", "val_acc", "test_acc"])
            for r in records:
                w.writerow([r.meta_epoch, repr(float(r.val_acc)), "" if r.test_acc is None else repr(float(r.test_acc))])
    except OSError as exc:
        raise OSError(f"could not write curves to {path}: {exc}") from exc


def read_curves(path) -> list[tuple[int, float, float | None]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["meta_epoch"]), float(r["val_acc"]), float(r["test_acc"]) if r["test_acc"] else None) for r in rows]


# ---------------------------------------------------------------------- sweeps

SWEEPABLE = ("step_size", "noise_range", "policy", "dropout", "word_drop", "patience", "epochs", "batch_size")


@dataclass
class SweepResult:
    point: dict
    test_accs: list[float]
    baseline_accs: list[float]
    seeds: list[int]
    failures: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.test_accs)

    @property
    def mean(self) -> float:
        return float(np.mean(self.test_accs)) if self.test_accs else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.test_accs)) if self.test_accs else math.nan

    @property
    def baseline_mean(self) -> float:
        return float(np.mean(self.baseline_accs)) if self.baseline_accs else math.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(n=self.n, mean=self.mean, std=self.std, baseline_mean=self.baseline_mean)
        return d


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        raise InputError("sweep grid is empty")
    for name, values in grid.items():
        if not values:
            raise InputError(f"sweep parameter {name!r} has no values")
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def _run_point(run_fn, point, seed):
    try:
        return run_fn(point, seed), None
    except Exception as exc:  # one failed run must not sink the sweep
        log.warning("sweep run %s seed %d failed: %s", point, seed, exc)
        return None, f"{type(exc).__name__}: {exc}"


def run_sweep(run_fn, grid: dict, n_seeds: int = 1, master_seed: int = 0, jobs: int = 1) -> list[SweepResult]:
    """Evaluate every grid point ``n_seeds`` times.

    ``run_fn(point, seed)`` performs one meta-training run and returns
    ``(baseline_test_acc, final_test_acc)``. Seeds are
    ``derive_seed(master_seed, grid_index, repeat)``. With ``jobs > 1`` runs
    go to a process pool (``run_fn`` must then be picklable); results are
    gathered in grid order either way.
    """
    if n_seeds < 1:
        raise InputError("n_seeds must be >= 1")
    points = expand_grid(grid)
    tasks = [(gi, r, derive_seed(master_seed, gi, r)) for gi in range(len(points)) for r in range(n_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_point, run_fn, points[gi], seed) for gi, _, seed in tasks]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_point(run_fn, points[gi], seed) for gi, _, seed in tasks]

    results = [SweepResult(point, [], [], []) for point in points]
    for (gi, _, seed), (value, err) in zip(tasks, outcomes):
        res = results[gi]
        if err is not None:
            res.failures.append(f"seed {seed}: {err}")
            continue
        baseline, final = value
        res.seeds.append(seed)
        res.baseline_accs.append(float(baseline))
        res.test_accs.append(float(final))
    return results


def write_sweep(results, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for res in results:
            fh.write(json.dumps(res.to_dict(), sort_keys=True) + "\n")
