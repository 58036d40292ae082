"""Selective clean-label backdoor workbench for sparse binary malware classifiers."""

__version__ = "0.1.0"

from .data import (
    Dataset,
    FeatureVector,
    Label,
    LabeledSample,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_train_test,
)
from .errors import ConfigError, DataError, DivergenceError, SelbackError

__all__ = [
    "Dataset",
    "FeatureVector",
    "Label",
    "LabeledSample",
    "SyntheticSpec",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "split_train_test",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "SelbackError",
    "__version__",
]
