"""Meta-classifier trojan detection with jumbo learning and query tuning.

The defender trains many small shadow classifiers, half clean and half
poisoned with randomly sampled (jumbo) triggers injected into benign-labeled
samples, then fits a logistic-regression meta-classifier on each shadow's
probability outputs over a shared query set. With query tuning, the query
inputs are co-optimized with the meta-classifier by gradient descent through
the shadow models. A suspect model is scored by the meta-classifier on the
same queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ..data import Dataset
from ..errors import ConfigError, DataError
from ..metrics import auc
from ..mlp import (
    MlpModel,
    MlpSpec,
    TrainConfig,
    init_model,
    predict_proba_matrix,
    proba_input_gradients,
    train_on_matrix,
)
from ..parallel import farm_context, farm_map
from ..seeding import derive_seed


@dataclass(frozen=True)
class MntdConfig:
    n_clean_shadows: int = 128
    n_backdoor_shadows: int = 128
    shadow_fraction: float = 0.02  # jumbo-learning share of the training set
    shadow_hidden: int = 32
    shadow_dropout: float = 0.2
    shadow_epochs: int = 12
    shadow_lr: float = 1e-3
    shadow_batch: int = 32
    jumbo_count_range: tuple[int, int] = (5, 100)  # n drawn uniform in [lo, hi)
    jumbo_mode: str = "support"  # "support" or "benign_prefix"
    jumbo_support: tuple[int, ...] | None = None  # candidate features (rank order
    # matters for benign_prefix); None means every feature
    shadow_poison_range: tuple[float, float] = (0.05, 0.5)
    query_count: int = 100
    query_init_range: tuple[int, int] = (10, 100)  # active features per query
    query_tuning: bool = True
    meta_epochs: int = 60
    meta_steps_per_epoch: int = 5
    meta_lr: float = 0.05
    query_lr: float = 0.1
    val_fraction: float = 0.11
    workers: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_clean_shadows < 2 or self.n_backdoor_shadows < 2:
            raise ConfigError("need at least two shadows per class")
        if self.query_count < 1:
            raise ConfigError("query set must be nonempty")
        if self.jumbo_mode not in ("support", "benign_prefix"):
            raise ConfigError(f"unknown jumbo mode {self.jumbo_mode!r}")
        if self.jumbo_count_range[0] < 1 or (
            self.jumbo_count_range[1] <= self.jumbo_count_range[0]
        ):
            raise ConfigError("jumbo count range must satisfy 1 <= lo < hi")


def jumbo_sample_trigger(cfg: MntdConfig, rng: np.random.Generator, dim: int) -> np.ndarray:
    """Random trigger for one backdoored shadow model."""
    lo, hi = cfg.jumbo_count_range
    support = (
        np.asarray(cfg.jumbo_support, dtype=np.int64)
        if cfg.jumbo_support is not None
        else np.arange(dim, dtype=np.int64)
    )
    if support.size < hi - 1:
        raise ConfigError(
            f"support of {support.size} features cannot host triggers up to {hi - 1}"
        )
    n = int(rng.integers(lo, hi))
    if cfg.jumbo_mode == "benign_prefix":
        return support[:n].copy()
    return np.sort(rng.choice(support, size=n, replace=False))


@dataclass(frozen=True)
class ShadowEntry:
    model: MlpModel
    is_backdoored: bool
    trigger: tuple[int, ...] | None

    def __post_init__(self) -> None:
        if self.is_backdoored != (self.trigger is not None):
            raise DataError("backdoor flag inconsistent with trigger provenance")


@dataclass
class ShadowModelSet:
    entries: list[ShadowEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def labels(self) -> np.ndarray:
        return np.array([e.is_backdoored for e in self.entries], dtype=np.int8)


def _train_one_shadow(payload: tuple[int, bool]) -> ShadowEntry:
    index, backdoored = payload
    ctx = farm_context()
    cfg: MntdConfig = ctx["cfg"]
    csr = ctx["csr"]
    labels = ctx["labels"]
    dim = csr.shape[1]
    purpose = "shadow-bd" if backdoored else "shadow-clean"
    rng = np.random.default_rng(derive_seed(cfg.seed, purpose, index))

    n = csr.shape[0]
    take = max(2, int(round(cfg.shadow_fraction * n)))
    rows = rng.choice(n, size=take, replace=False)
    X = csr[rows]
    y = labels[rows].astype(np.float64)

    trigger = None
    if backdoored:
        trigger = jumbo_sample_trigger(cfg, rng, dim)
        benign_rows = np.flatnonzero(y == 0.0)
        if benign_rows.size:
            frac = rng.uniform(*cfg.shadow_poison_range)
            n_poison = max(1, int(round(frac * take)))
            chosen = rng.choice(benign_rows, size=min(n_poison, benign_rows.size), replace=False)
            poisoned = X[chosen].toarray()
            poisoned[:, trigger] = 1.0
            X = sparse.vstack([X, sparse.csr_matrix(poisoned)])
            y = np.concatenate([y, np.zeros(chosen.size)])

    spec = MlpSpec(dim, cfg.shadow_hidden, cfg.shadow_dropout)
    seed = derive_seed(cfg.seed, purpose + "-train", index)
    model = init_model(spec, seed)
    train_cfg = TrainConfig(
        epochs=cfg.shadow_epochs,
        batch_size=cfg.shadow_batch,
        learning_rate=cfg.shadow_lr,
        seed=seed,
    )
    model = train_on_matrix(model, X, y, train_cfg)
    return ShadowEntry(model, backdoored, tuple(int(i) for i in trigger) if trigger is not None else None)


def train_shadow_models(train_ds: Dataset, cfg: MntdConfig) -> ShadowModelSet:
    """Clean and jumbo-backdoored shadows; deterministic per (index, seed)."""
    if len(train_ds) == 0:
        raise DataError("training data is empty")
    csr = train_ds.to_csr()
    payloads = [(i, False) for i in range(cfg.n_clean_shadows)] + [
        (i, True) for i in range(cfg.n_backdoor_shadows)
    ]
    context = {"cfg": cfg, "csr": csr, "labels": train_ds.labels_array()}
    entries = farm_map(_train_one_shadow, payloads, cfg.workers, context)
    return ShadowModelSet(entries)


@dataclass
class MetaClassifier:
    weights: np.ndarray
    bias: float

    def score(self, representation: np.ndarray) -> float:
        z = float(representation @ self.weights + self.bias)
        return 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))


def model_representation(model: MlpModel, queries: np.ndarray) -> np.ndarray:
    """Probability outputs over the query set: the meta-classifier's view."""
    return predict_proba_matrix(model, queries)


def init_queries(cfg: MntdConfig, dim: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(cfg.seed, "queries"))
    lo, hi = cfg.query_init_range
    queries = np.zeros((cfg.query_count, dim))
    for i in range(cfg.query_count):
        k = int(rng.integers(lo, hi + 1))
        queries[i, rng.choice(dim, size=min(k, dim), replace=False)] = 1.0
    return queries


def _representations(models: list[MlpModel], queries: np.ndarray) -> np.ndarray:
    return np.array([model_representation(m, queries) for m in models])


def train_meta(
    shadows: ShadowModelSet, cfg: MntdConfig, dim: int
) -> tuple[MetaClassifier, np.ndarray, float]:
    """Fit the meta-classifier (optionally co-tuning queries); returns
    (meta, queries, validation AUC)."""
    flags = shadows.labels()
    if flags.min() == flags.max():
        raise DataError("shadow set must contain both clean and backdoored models")

    rng = np.random.default_rng(derive_seed(cfg.seed, "meta-split"))
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in (0, 1):
        rows = np.flatnonzero(flags == cls)
        rows = rng.permutation(rows)
        n_val = max(1, int(round(cfg.val_fraction * rows.size)))
        val_idx.extend(rows[:n_val])
        train_idx.extend(rows[n_val:])
    train_idx = np.array(sorted(train_idx))
    val_idx = np.array(sorted(val_idx))

    queries = init_queries(cfg, dim)
    models = [e.model for e in shadows.entries]
    y_train = flags[train_idx].astype(np.float64)
    train_models = [models[i] for i in train_idx]

    w = np.zeros(cfg.query_count)
    b = 0.0
    mw = np.zeros_like(w)
    vw = np.zeros_like(w)
    mb = vb = 0.0
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0

    R = _representations(train_models, queries)
    for _ in range(cfg.meta_epochs):
        for _ in range(cfg.meta_steps_per_epoch):
            t += 1
            z = R @ w + b
            p = 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))
            err = (p - y_train) / y_train.size
            g_w = R.T @ err
            g_b = float(err.sum())
            lr_t = cfg.meta_lr * np.sqrt(1 - beta2**t) / (1 - beta1**t)
            mw = beta1 * mw + (1 - beta1) * g_w
            vw = beta2 * vw + (1 - beta2) * g_w**2
            w -= lr_t * mw / (np.sqrt(vw) + eps)
            mb = beta1 * mb + (1 - beta1) * g_b
            vb = beta2 * vb + (1 - beta2) * g_b**2
            b -= lr_t * mb / (np.sqrt(vb) + eps)
        if cfg.query_tuning:
            z = R @ w + b
            p = 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))
            err = (p - y_train) / y_train.size
            grad_q = np.zeros_like(queries)
            for e_i, model in zip(err, train_models):
                if e_i == 0.0:
                    continue
                _, dp = proba_input_gradients(model, queries)
                grad_q += (e_i * w)[:, None] * dp
            queries = np.clip(queries - cfg.query_lr * grad_q, 0.0, 1.0)
            R = _representations(train_models, queries)

    meta = MetaClassifier(w, b)
    val_models = [models[i] for i in val_idx]
    val_scores = [meta.score(model_representation(m, queries)) for m in val_models]
    val_auc = auc(np.array(val_scores), flags[val_idx].astype(int))
    return meta, queries, val_auc


def mntd_evaluate(
    meta: MetaClassifier,
    queries: np.ndarray,
    clean_models: list[MlpModel],
    backdoored_models: list[MlpModel],
) -> float:
    """Detection AUC over target pools; backdoored is the positive class."""
    if not clean_models or not backdoored_models:
        raise DataError("both target pools must be nonempty")
    scores = [meta.score(model_representation(m, queries)) for m in clean_models]
    scores += [meta.score(model_representation(m, queries)) for m in backdoored_models]
    labels = [0] * len(clean_models) + [1] * len(backdoored_models)
    return auc(np.array(scores), np.array(labels))
