"""Selective clean-label backdoor attack in feature space.

The trigger is a feature mask optimized so that, on a poisoned classifier,
target-family malware carrying the trigger flips to benign while other
malware keeps its malicious prediction and triggered benign samples stay
benign. Because the trigger and the poisoned classifier depend on each
other, both are solved jointly by alternating updates: gradient steps on a
continuous mask relaxation against a weighted three-set loss, then a
training pass of the local classifier on the current poison set plus clean
data. The poison set is a small, fixed group of benign samples that keep
their benign labels (clean-label).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .data import Dataset, FeatureVector, Label, LabeledSample
from .errors import ConfigError, DataError, DivergenceError
from .mlp import (
    AdamState,
    MlpModel,
    MlpSpec,
    TrainConfig,
    adam_step,
    init_model,
    input_gradient_batch,
    train_on_matrix,
    weighted_param_grads,
)
from .seeding import derive_seed

BENIGN, MALICIOUS = 0.0, 1.0


@dataclass
class TriggerMask:
    """Continuous mask relaxation in [0,1]^q with a binarized view.

    When ``support`` is set, values outside it are pinned to exactly zero at
    all times. A feature enters the binary view iff its value is strictly
    above ``threshold``.
    """

    dim: int
    values: np.ndarray
    threshold: float = 0.5
    support: np.ndarray | None = None  # sorted feature indices, or None = all

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.dim,):
            raise ConfigError("mask values must have shape (dim,)")
        if self.support is not None:
            self.support = np.unique(np.asarray(self.support, dtype=np.int64))
            if self.support.size and (
                self.support[0] < 0 or self.support[-1] >= self.dim
            ):
                raise ConfigError("support indices out of range")
            blocked = np.ones(self.dim, dtype=bool)
            blocked[self.support] = False
            self._blocked = blocked
        else:
            self._blocked = None
        self.clamp_()

    @classmethod
    def uniform(
        cls,
        dim: int,
        rng: np.random.Generator,
        support: np.ndarray | None = None,
        threshold: float = 0.5,
    ) -> "TriggerMask":
        return cls(dim, rng.uniform(0.0, 1.0, size=dim), threshold, support)

    def clamp_(self) -> None:
        np.clip(self.values, 0.0, 1.0, out=self.values)
        if self._blocked is not None:
            self.values[self._blocked] = 0.0

    def binary_indices(self) -> np.ndarray:
        return np.flatnonzero(self.values > self.threshold)

    def size(self) -> int:
        return int(self.binary_indices().size)

    @property
    def blocked(self) -> np.ndarray | None:
        """Boolean mask of features pinned to zero, or None."""
        return self._blocked


def save_trigger(mask: TriggerMask, path: str | Path) -> None:
    obj = {
        "dim": mask.dim,
        "values": mask.values.tolist(),
        "threshold": mask.threshold,
        "binary": mask.binary_indices().tolist(),
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_trigger(path: str | Path) -> TriggerMask:
    path = Path(path)
    if not path.exists():
        raise DataError(f"trigger file not found: {path}")
    with open(path) as fh:
        obj = json.load(fh)
    return TriggerMask(int(obj["dim"]), np.array(obj["values"]), float(obj["threshold"]))


@dataclass(frozen=True)
class AttackConfig:
    """Hyperparameters of the alternating trigger/model optimization."""

    lambda1: float = 5.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 0.001
    v: float = 1.0
    batches: int = 5  # training-set splits per outer iteration
    n_benign: int = 24  # benign samples drawn per batch for trigger solving
    n_remaining: int = 24  # remaining-malware samples drawn per batch
    poison_count: int = 8  # benign poison samples, drawn once and fixed
    max_iterations: int = 200
    trigger_lr: float = 0.25
    trigger_steps: int = 1
    local_train: TrainConfig = field(default_factory=TrainConfig)
    update_learning_rate: float | None = None  # None -> local_train rate
    pretrain_epochs: int = 3
    convergence_patience: int = 10
    convergence_tol: float = 0.05
    lambda4_adaptive: bool = False
    trigger_size_budget: int | None = None
    # "proportional": poison samples join each classifier-update step at
    # their natural prevalence, keeping the local model close to the real
    # poisoned target. "mean": the poison term enters as a full mean-CE
    # term regardless of prevalence, which backdoors the local model much
    # harder than the target ever will be.
    poison_weighting: str = "proportional"
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.v) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.batches < 1:
            raise ConfigError("batches must be >= 1")
        if self.poison_count < 1:
            raise ConfigError("poison_count must be >= 1")
        if self.poison_weighting not in ("proportional", "mean"):
            raise ConfigError(f"unknown poison weighting {self.poison_weighting!r}")


class TriggerBatch(NamedTuple):
    """Dense sample blocks used for one trigger-loss evaluation."""

    target: np.ndarray
    remaining: np.ndarray
    benign: np.ndarray


def inject(x: FeatureVector, m_binary: Sequence[int]) -> FeatureVector:
    """Binary trigger injection: features are only ever added."""
    m = [int(i) for i in m_binary]
    for idx in m:
        if idx < 0 or idx >= x.dim:
            raise DataError(f"trigger index {idx} out of range for dim {x.dim}")
    return FeatureVector.from_indices(x.dim, list(x.active) + m)


def inject_dataset(ds: Dataset, m_binary: Sequence[int]) -> Dataset:
    samples = [
        LabeledSample(inject(s.vector, m_binary), s.label, s.family) for s in ds.samples
    ]
    return Dataset(ds.dim, samples)


def inject_relaxed(x_dense: np.ndarray, m_values: np.ndarray) -> np.ndarray:
    """(1 - m) * x + m, elementwise; works on a batch's rows too."""
    x_dense = np.asarray(x_dense, dtype=np.float64)
    m_values = np.asarray(m_values, dtype=np.float64)
    if x_dense.shape[-1] != m_values.shape[0]:
        raise DataError("mask and input dimensions differ")
    return (1.0 - m_values) * x_dense + m_values


def trigger_loss(
    model: MlpModel,
    batch: TriggerBatch,
    mask: TriggerMask,
    lambda1: float,
    lambda2: float,
    lambda3: float,
    lambda4: float,
) -> tuple[float, np.ndarray]:
    """Weighted three-set cross-entropy plus L1 size penalty, with gradient.

    Each set term is the mean cross-entropy of the relaxed-triggered set
    toward its desired label. The gradient w.r.t. the mask uses
    d x*/d m = (1 - x) elementwise.
    """
    total = 0.0
    grad = np.zeros(mask.dim)
    for X, desired, weight in (
        (batch.target, BENIGN, lambda1),
        (batch.remaining, MALICIOUS, lambda2),
        (batch.benign, BENIGN, lambda3),
    ):
        if weight == 0.0 or X is None or X.shape[0] == 0:
            continue
        X = np.asarray(X, dtype=np.float64)
        X_star = inject_relaxed(X, mask.values)
        y = np.full(X.shape[0], desired)
        losses, g_x = input_gradient_batch(model, X_star, y)
        total += weight * float(losses.mean())
        grad += weight * ((g_x * (1.0 - X)).mean(axis=0))
    # values are clamped to [0,1], so the L1 norm is a plain sum
    total += lambda4 * float(mask.values.sum())
    grad += lambda4
    if mask.blocked is not None:
        grad[mask.blocked] = 0.0
    return total, grad


@dataclass
class PoisonSet:
    """Clean-label poison pairs: (benign original, triggered vector)."""

    entries: list[tuple[LabeledSample, FeatureVector]]

    def __len__(self) -> int:
        return len(self.entries)

    def to_dataset(self, dim: int) -> Dataset:
        return Dataset(
            dim, [LabeledSample(tv, Label.BENIGN) for _, tv in self.entries]
        )


def choose_poison_rows(train_ds: Dataset, n_poison: int, seed: int) -> np.ndarray:
    """Row indices of the benign samples forming the fixed poison set."""
    benign = train_ds.benign_indices()
    if benign.size < n_poison:
        raise DataError(
            f"need {n_poison} benign samples for the poison set, have {benign.size}"
        )
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(benign, size=n_poison, replace=False))


def build_poison_set(
    train_ds: Dataset, m_binary: Sequence[int], n_poison: int, seed: int
) -> PoisonSet:
    """n_poison random benign samples with the trigger; labels stay benign."""
    rows = choose_poison_rows(train_ds, n_poison, seed)
    entries = []
    for i in rows:
        original = train_ds.samples[i]
        entries.append((original, inject(original.vector, m_binary)))
    return PoisonSet(entries)


def universal_baseline_trigger(ranking: Sequence[int], n: int) -> np.ndarray:
    """Top-n features of a most-benign-first ranking."""
    if n < 1:
        raise ConfigError("universal trigger size must be >= 1")
    if n > len(ranking):
        raise ConfigError(f"requested {n} features, ranking has {len(ranking)}")
    return np.asarray(ranking[:n], dtype=np.int64)


@dataclass
class AttackResult:
    mask: TriggerMask
    poison_set: PoisonSet
    local_model: MlpModel
    log: list[dict]
    converged: bool

    @property
    def trigger_indices(self) -> np.ndarray:
        return self.mask.binary_indices()


def optimize_trigger(
    train_ds: Dataset,
    target_family: str,
    cfg: AttackConfig,
    local_spec: MlpSpec,
    support: Sequence[int] | None = None,
) -> AttackResult:
    """Alternating optimization of the trigger mask and a local classifier.

    The local classifier mimics the eventual poisoned target: it never sees
    the target family as clean training data (that malware is the attacker's
    own, unknown to the defender) but is updated each round on the current
    relaxed poison set plus a clean batch. Returns the binarized trigger,
    the final clean-label poison set, the local model, and a per-iteration
    log.
    """
    t_idx = train_ds.family_indices(target_family)
    if t_idx.size == 0:
        raise DataError(f"target family {target_family!r} not present in training data")

    csr = train_ds.to_csr()
    labels = train_ds.labels_array().astype(np.float64)
    X_target = csr[t_idx].toarray()

    in_target = np.zeros(len(train_ds), dtype=bool)
    in_target[t_idx] = True
    rest_idx = np.flatnonzero(~in_target)
    rest_labels = labels[rest_idx]
    rest_benign = rest_idx[rest_labels == 0.0]
    rest_remaining = rest_idx[rest_labels == 1.0]
    if rest_remaining.size == 0 or rest_benign.size == 0:
        raise DataError("training data must contain benign and remaining malware")

    rng = np.random.default_rng(derive_seed(cfg.seed, "attack-loop"))
    mask = TriggerMask.uniform(
        train_ds.dim,
        np.random.default_rng(derive_seed(cfg.seed, "mask-init")),
        support=np.asarray(support, dtype=np.int64) if support is not None else None,
    )

    local = init_model(local_spec, derive_seed(cfg.seed, "local-init"))
    adam = AdamState(local)
    train_rng = np.random.default_rng(derive_seed(cfg.seed, "local-train"))
    if cfg.pretrain_epochs > 0:
        local = train_on_matrix(
            local,
            csr[rest_idx],
            rest_labels,
            cfg.local_train,
            epochs=cfg.pretrain_epochs,
            rng=train_rng,
            adam=adam,
        )
    update_cfg = cfg.local_train
    if cfg.update_learning_rate is not None:
        update_cfg = replace(cfg.local_train, learning_rate=cfg.update_learning_rate)

    poison_rows = choose_poison_rows(
        train_ds, cfg.poison_count, derive_seed(cfg.seed, "poison-set")
    )
    X_poison = csr[poison_rows].toarray()
    y_poison = np.zeros(cfg.poison_count)
    poison_w = np.full(cfg.poison_count, 1.0 / cfg.poison_count)

    lambda4 = cfg.lambda4
    log: list[dict] = []
    prev_binary: frozenset[int] | None = None
    stable = 0
    converged = False

    for it in range(cfg.max_iterations):
        order = rng.permutation(rest_idx.size)
        for chunk in np.array_split(order, cfg.batches):
            batch_rows = rest_idx[chunk]
            batch_labels = labels[batch_rows]
            b_pool = batch_rows[batch_labels == 0.0]
            r_pool = batch_rows[batch_labels == 1.0]
            b_take = min(cfg.n_benign, b_pool.size)
            r_take = min(cfg.n_remaining, r_pool.size)
            X_benign = csr[rng.choice(b_pool, b_take, replace=False)].toarray()
            X_remaining = csr[rng.choice(r_pool, r_take, replace=False)].toarray()

            batch = TriggerBatch(X_target, X_remaining, X_benign)
            for _ in range(cfg.trigger_steps):
                loss, grad = trigger_loss(
                    local, batch, mask, cfg.lambda1, cfg.lambda2, cfg.lambda3, lambda4
                )
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite trigger loss at iteration {it}")
                mask.values -= cfg.trigger_lr * grad
                mask.clamp_()

            # classifier update: one pass over the batch, with the relaxed
            # poison set attached to every step (clean-label: targets benign)
            X_p_star = inject_relaxed(X_poison, mask.values)
            bs = cfg.local_train.batch_size
            sub_order = rng.permutation(batch_rows.size)
            for start in range(0, batch_rows.size, bs):
                rows = batch_rows[sub_order[start : start + bs]]
                if cfg.poison_weighting == "proportional":
                    total = cfg.poison_count + rows.size
                    p_w = np.full(cfg.poison_count, 1.0 / total)
                    c_w = np.full(rows.size, cfg.v / total)
                else:
                    p_w = poison_w
                    c_w = np.full(rows.size, cfg.v / rows.size)
                loss_p, g_p = weighted_param_grads(
                    local, X_p_star, y_poison, p_w, dropout_rng=train_rng
                )
                loss_c, g_c = weighted_param_grads(
                    local,
                    csr[rows],
                    labels[rows],
                    c_w,
                    dropout_rng=train_rng,
                )
                if not (np.isfinite(loss_p) and np.isfinite(loss_c)):
                    raise DivergenceError(
                        f"non-finite classifier loss at iteration {it}"
                    )
                grads = {k: g_p[k] + g_c[k] for k in g_p}
                adam_step(local, grads, adam, update_cfg)

        binary = frozenset(int(i) for i in mask.binary_indices())
        X_t_star = inject_relaxed(X_target, _binary_values(mask))
        t_losses, _ = input_gradient_batch(
            local, X_t_star, np.zeros(X_target.shape[0])
        )
        target_loss = float(t_losses.mean())
        log.append(
            {
                "iteration": it,
                "trigger_size": len(binary),
                "target_loss": target_loss,
                "lambda4": lambda4,
            }
        )

        if cfg.lambda4_adaptive and cfg.trigger_size_budget is not None:
            if len(binary) > cfg.trigger_size_budget:
                lambda4 = min(lambda4 * 2.0, 1e3)
            else:
                lambda4 = max(lambda4 / 2.0, 1e-6)

        stable = stable + 1 if binary == prev_binary else 0
        prev_binary = binary
        if stable >= cfg.convergence_patience and target_loss < cfg.convergence_tol:
            converged = True
            break

    final_indices = mask.binary_indices()
    final_poison = PoisonSet(
        [
            (train_ds.samples[i], inject(train_ds.samples[i].vector, final_indices))
            for i in poison_rows
        ]
    )
    return AttackResult(mask, final_poison, local, log, converged)


def _binary_values(mask: TriggerMask) -> np.ndarray:
    values = np.zeros(mask.dim)
    values[mask.binary_indices()] = 1.0
    return values
