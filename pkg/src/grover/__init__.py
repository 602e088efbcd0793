"""Iterative retraining with frequency-ordered embedding maskers (GROVER)."""
from .controller import GroverConfig, MetaEpochRecord, run_meta_training, train_once
from .data import Vocabulary, build_vocab, tokenize
from .embeddings import EmbeddingTable, apply_maskers, frequency_order, init_random
from .nn import ClassifierConfig

__version__ = "0.1.0"
