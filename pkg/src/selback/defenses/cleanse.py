"""Trigger reverse engineering for binary sparse classifiers.

Searches for the smallest additive feature mask that flips a pool of
non-target-class samples to the target label: gradient descent on a relaxed
mask under cross-entropy plus an adaptively weighted L1 size cost. The mask
can only set features to 1, never remove them. With two classes there is no
outlier test across labels; callers compare the reversed trigger sizes of
clean and suspect models directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Dataset
from ..errors import ConfigError, DataError
from ..mlp import MlpModel, input_gradient_batch, predict_proba_matrix
from ..attack import TriggerMask, inject_relaxed
from ..seeding import derive_seed


@dataclass(frozen=True)
class NcConfig:
    target_label: int = 0  # benign
    learning_rate: float = 0.001
    init_cost: float = 0.001
    cost_multiplier: float = 2.0
    patience: int = 5
    max_steps: int = 1500
    batch_size: int = 64
    success_goal: float = 0.99
    threshold: float = 0.5
    check_every: int = 25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.target_label not in (0, 1):
            raise ConfigError("target label must be 0 (benign) or 1 (malicious)")


@dataclass
class NcResult:
    mask_values: np.ndarray
    trigger: np.ndarray  # binarized feature indices
    size: int
    success_rate: float
    reached_goal: bool
    steps: int

    def as_dict(self) -> dict:
        return {
            "trigger": self.trigger.tolist(),
            "size": self.size,
            "success_rate": self.success_rate,
            "reached_goal": self.reached_goal,
            "steps": self.steps,
        }


def _binary_success(
    model: MlpModel, pool: np.ndarray, indices: np.ndarray, target: int
) -> float:
    injected = pool.copy()
    if indices.size:
        injected[:, indices] = 1.0
    preds = (predict_proba_matrix(model, injected) >= 0.5).astype(int)
    return float((preds == target).mean())


def nc_reverse_trigger(
    model: MlpModel, target_label: int, pool: Dataset, cfg: NcConfig = NcConfig()
) -> NcResult:
    """Reverse the smallest mask flipping the pool to ``target_label``.

    Failing to reach the success goal within the step budget is reported in
    the result, not raised. Among checkpoints that meet the goal, the
    smallest binarized trigger is returned.
    """
    wanted = 1 - target_label
    rows = [
        i for i, s in enumerate(pool.samples) if s.label.as_int == wanted
    ]
    if not rows:
        raise DataError("pool contains no samples of the non-target class")
    X = pool.subset(rows).to_csr().toarray()
    n = X.shape[0]
    y = np.full(n, float(target_label))

    rng = np.random.default_rng(derive_seed(cfg.seed, "nc-init"))
    mask = TriggerMask(pool.dim, rng.uniform(0.0, 1.0, pool.dim), cfg.threshold)
    cost = cfg.init_cost
    up = down = 0

    m_adam = np.zeros(pool.dim)
    v_adam = np.zeros(pool.dim)
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    best: tuple[int, np.ndarray, float] | None = None  # (size, values, success)
    last_success = 0.0
    order_rng = np.random.default_rng(derive_seed(cfg.seed, "nc-batches"))

    step = 0
    while step < cfg.max_steps:
        order = order_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if step >= cfg.max_steps:
                break
            batch = X[order[start : start + cfg.batch_size]]
            step += 1
            X_star = inject_relaxed(batch, mask.values)
            losses, g_x = input_gradient_batch(model, X_star, y[: batch.shape[0]])
            grad = (g_x * (1.0 - batch)).mean(axis=0) + cost
            m_adam = beta1 * m_adam + (1 - beta1) * grad
            v_adam = beta2 * v_adam + (1 - beta2) * grad * grad
            lr_t = cfg.learning_rate * np.sqrt(1 - beta2**step) / (1 - beta1**step)
            mask.values -= lr_t * m_adam / (np.sqrt(v_adam) + eps)
            mask.clamp_()

            if step % cfg.check_every == 0:
                indices = mask.binary_indices()
                last_success = _binary_success(model, X, indices, target_label)
                if last_success >= cfg.success_goal:
                    if best is None or indices.size < best[0]:
                        best = (int(indices.size), mask.values.copy(), last_success)
                    up += 1
                    down = 0
                    if up >= cfg.patience:
                        cost *= cfg.cost_multiplier
                        up = 0
                else:
                    down += 1
                    up = 0
                    if down >= cfg.patience:
                        cost /= cfg.cost_multiplier
                        down = 0

    if best is not None:
        size, values, success = best
        return NcResult(values, TriggerMask(pool.dim, values, cfg.threshold).binary_indices(), size, success, True, step)
    indices = mask.binary_indices()
    last_success = _binary_success(model, X, indices, target_label)
    return NcResult(
        mask.values, indices, int(indices.size), last_success, False, step
    )
