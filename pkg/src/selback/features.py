"""Linear-SVM feature selection and benign-feature ranking.

A hinge-loss + L2 linear SVM is trained by epoch-ordered subgradient descent
(Pegasos schedule, seeded per-epoch shuffling). Malicious is the positive
class, so benign-indicative features carry negative weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, FeatureVector, LabeledSample
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class SvmConfig:
    epochs: int = 10
    C: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class FeatureSelection:
    """Kept features in rank order plus the original->new index remap."""

    original_dim: int
    kept: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(set(self.kept)) != len(self.kept):
            raise DataError("kept feature indices must be distinct")
        if len(self.kept) > self.original_dim:
            raise DataError("cannot keep more features than the original dim")

    @property
    def remap(self) -> dict[int, int]:
        return {old: new for new, old in enumerate(self.kept)}

    def apply(self, ds: Dataset) -> Dataset:
        if ds.dim != self.original_dim:
            raise DataError(
                f"selection built for dim {self.original_dim}, dataset has {ds.dim}"
            )
        remap = self.remap
        new_dim = len(self.kept)
        samples = []
        for s in ds.samples:
            active = sorted(remap[i] for i in s.vector.active if i in remap)
            samples.append(
                LabeledSample(FeatureVector(new_dim, tuple(active)), s.label, s.family)
            )
        return Dataset(new_dim, samples)


def save_selection(sel: FeatureSelection, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump({"original_dim": sel.original_dim, "kept": list(sel.kept)}, fh)


def load_selection(path: str | Path) -> FeatureSelection:
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature selection file not found: {path}")
    with open(path) as fh:
        obj = json.load(fh)
    return FeatureSelection(int(obj["original_dim"]), tuple(obj["kept"]))


def train_linear_svm(ds: Dataset, cfg: SvmConfig = SvmConfig()) -> tuple[np.ndarray, float]:
    """Hinge + L2 subgradient training; returns (weights, bias).

    Decision rule: w.x + b >= 0 predicts malicious (+1).
    """
    labels = ds.labels_array()
    if labels.min() == labels.max():
        raise DataError("SVM training requires both classes to be present")
    if cfg.epochs < 1:
        raise ConfigError("SVM epochs must be >= 1")

    n = len(ds)
    y = labels.astype(np.float64) * 2.0 - 1.0
    lam = 1.0 / (cfg.C * n)
    w = np.zeros(ds.dim)
    b = 0.0
    rng = np.random.default_rng(cfg.seed)
    actives = [np.asarray(s.vector.active, dtype=np.int64) for s in ds.samples]

    t = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            idx = actives[i]
            margin = y[i] * (w[idx].sum() + b)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w[idx] += eta * y[i]
                b += eta * y[i]
    return w, b


def select_features_svm(ds: Dataset, k: int, cfg: SvmConfig = SvmConfig()) -> FeatureSelection:
    """Top-k features by absolute SVM weight, rank ordered."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    w, _ = train_linear_svm(ds, cfg)
    k = min(k, ds.dim)
    order = np.argsort(-np.abs(w), kind="stable")
    return FeatureSelection(ds.dim, tuple(int(i) for i in order[:k]))


def rank_benign_features(ds: Dataset, cfg: SvmConfig = SvmConfig()) -> list[int]:
    """All features ordered most-benign first (most negative SVM weight)."""
    w, _ = train_linear_svm(ds, cfg)
    order = np.argsort(w, kind="stable")
    return [int(i) for i in order]
