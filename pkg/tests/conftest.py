import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from grover.data import Vocabulary  # noqa: E402

ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``acceptance(n, description, passed, detail)`` for the final summary."""

    def record(number, description, passed, detail=""):
        ACCEPTANCE[number] = (description, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        description, passed, detail = ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {description}" + (f" ({detail})" if detail else ""))


def make_vocab(n_regular, freqs=None):
    """Vocabulary of ``<pad>, <oov>, t0 .. t{n-1}`` with given (or decreasing) frequencies."""
    itos = ["<pad>", "<oov>"] + [f"t{i}" for i in range(n_regular)]
    if freqs is None:
        freqs = list(range(n_regular, 0, -1))
    return Vocabulary(itos, [0, 0] + list(freqs))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_problem(seed=0, model_kind="textcnn", dtype=np.float64, signal=0.3):
    """A seconds-scale learnable problem: (train, val, test, table, classifier)."""
    from grover.data import SyntheticSpec, build_vocab, generate_synthetic, make_dataset, split_train_val
    from grover.embeddings import init_random
    from grover.nn import ClassifierConfig

    spec = SyntheticSpec(classes=3, vocab_size=60, docs_per_class=30, test_docs_per_class=10,
                         doc_len=16, keywords_per_class=3, signal=signal, seed=seed)
    rows, test_rows = generate_synthetic(spec)
    train_rows, val_rows = split_train_val(rows, 0.2, seed=seed)
    vocab = build_vocab(t for _, t in train_rows)
    clf = ClassifierConfig(num_classes=3, embedding_dim=8, seq_len=16, kernel_sizes=(2, 3),
                           conv1_channels=4, conv2_channels=3, model_kind=model_kind)
    ds = [make_dataset(r, vocab, 16, 3, name) for r, name in
          ((train_rows, "train"), (val_rows, "val"), (test_rows, "test"))]
    return (*ds, init_random(vocab, 8, seed=seed, dtype=dtype), clf)
