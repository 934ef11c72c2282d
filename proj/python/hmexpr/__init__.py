"""Histone modification to gene expression toolkit."""

from ._core import (
    HM_NAMES,
    CellCorpus,
    Classifier,
    ConfigError,
    NumericError,
    ParseError,
    ShapeError,
    __version__,
    auroc,
    build_classifier,
    load_cell,
    load_classifier,
    run_command,
    synthetic_corpus,
    train_classifier,
    write_corpus_dir,
)

__all__ = [
    "HM_NAMES",
    "CellCorpus",
    "Classifier",
    "ConfigError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "__version__",
    "auroc",
    "build_classifier",
    "load_cell",
    "load_classifier",
    "run_command",
    "synthetic_corpus",
    "train_classifier",
    "write_corpus_dir",
]
