"""Attack metrics, AUC, F1, and the target-vs-remaining separability probe.

The three trigger metrics are conditioned on the clean model: only test
samples the clean model classifies correctly are eligible, so the numbers
isolate what the backdoor itself changed. Empty eligible sets yield None
rather than a fabricated 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .data import Dataset
from .errors import ConfigError, DataError
from .mlp import MlpModel, predict_proba_matrix
from .attack import inject_dataset


@dataclass(frozen=True)
class EvalPartition:
    """Test-split samples grouped into target / remaining / benign sets."""

    target: Dataset
    remaining: Dataset
    benign: Dataset


def split_eval_partition(test_ds: Dataset, target_family: str) -> EvalPartition:
    t_rows, r_rows, b_rows = [], [], []
    for i, s in enumerate(test_ds.samples):
        if s.label.as_int == 0:
            b_rows.append(i)
        elif s.family == target_family:
            t_rows.append(i)
        else:
            r_rows.append(i)
    return EvalPartition(
        test_ds.subset(t_rows), test_ds.subset(r_rows), test_ds.subset(b_rows)
    )


@dataclass
class AttackMetrics:
    asr_target: float | None
    asr_remaining: float | None
    fpr_benign_triggered: float | None
    f1_main: float
    trigger_size: int
    eligible_counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "asr_target": self.asr_target,
            "asr_remaining": self.asr_remaining,
            "fpr_benign_triggered": self.fpr_benign_triggered,
            "f1_main": self.f1_main,
            "trigger_size": self.trigger_size,
            "eligible_counts": dict(self.eligible_counts),
        }


def _predict(model: MlpModel, ds: Dataset) -> np.ndarray:
    """0/1 predictions; malicious iff P(malicious) >= 0.5."""
    if len(ds) == 0:
        return np.zeros(0, dtype=np.int8)
    return (predict_proba_matrix(model, ds.to_csr()) >= 0.5).astype(np.int8)


def f1_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """F1 with malicious (1) as the positive class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = int(((y_true == 1) & (y_pred == 1)).sum())
    fp = int(((y_true == 0) & (y_pred == 1)).sum())
    fn = int(((y_true == 1) & (y_pred == 0)).sum())
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def compute_metrics(
    clean_model: MlpModel,
    poisoned_model: MlpModel,
    partition: EvalPartition,
    m_binary: Sequence[int],
) -> AttackMetrics:
    counts = {}

    def conditioned_rate(ds: Dataset, true_label: int, flipped_to: int):
        if len(ds) == 0:
            counts[f"label{true_label}"] = 0
            return None, 0
        clean_pred = _predict(clean_model, ds)
        eligible = [i for i in range(len(ds)) if clean_pred[i] == true_label]
        if not eligible:
            return None, 0
        triggered = inject_dataset(ds.subset(eligible), m_binary)
        pred = _predict(poisoned_model, triggered)
        return float((pred == flipped_to).mean()), len(eligible)

    asr_t, n_t = conditioned_rate(partition.target, 1, 0)
    asr_r, n_r = conditioned_rate(partition.remaining, 1, 0)
    fpr_b, n_b = conditioned_rate(partition.benign, 0, 1)
    counts.update({"target": n_t, "remaining": n_r, "benign": n_b})

    full_test = partition.target.concat(partition.remaining).concat(partition.benign)
    f1 = f1_score(full_test.labels_array(), _predict(poisoned_model, full_test))
    return AttackMetrics(asr_t, asr_r, fpr_b, f1, len(set(int(i) for i in m_binary)), counts)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC requires both classes present")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class RegressionConfig:
    iterations: int = 4000
    learning_rate: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class SeparabilityReport:
    """How well logistic regression tells the target set from the rest."""

    mean_squared_error: float
    log_loss: float
    zero_one_error: float


def separability_regression(
    target: Dataset, remaining: Dataset, cfg: RegressionConfig = RegressionConfig()
) -> SeparabilityReport:
    """Train T-vs-R logistic regression; report training-set errors.

    A large error means the target set blends into the remaining malware, in
    which case a selective trigger is hard to realize.
    """
    if len(target) == 0 or len(remaining) == 0:
        raise DataError("both sets must be nonempty")
    if (
        len(target) == 1
        and len(remaining) == 1
        and target.samples[0].vector == remaining.samples[0].vector
    ):
        raise DataError("identical single samples cannot be separated")
    if target.dim != remaining.dim:
        raise DataError("sets must share a dimension")

    X = np.vstack([target.to_csr().toarray(), remaining.to_csr().toarray()])
    y = np.concatenate([np.ones(len(target)), np.zeros(len(remaining))])
    if cfg.iterations < 1 or cfg.learning_rate <= 0:
        raise ConfigError("invalid regression configuration")

    w = np.zeros(X.shape[1])
    b = 0.0
    m_w = np.zeros_like(w)
    v_w = np.zeros_like(w)
    m_b = v_b = 0.0
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    n = X.shape[0]
    for t in range(1, cfg.iterations + 1):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))
        err = (p - y) / n
        g_w = X.T @ err
        g_b = float(err.sum())
        lr_t = cfg.learning_rate * np.sqrt(1 - beta2**t) / (1 - beta1**t)
        m_w = beta1 * m_w + (1 - beta1) * g_w
        v_w = beta2 * v_w + (1 - beta2) * g_w**2
        w -= lr_t * m_w / (np.sqrt(v_w) + eps)
        m_b = beta1 * m_b + (1 - beta1) * g_b
        v_b = beta2 * v_b + (1 - beta2) * g_b**2
        b -= lr_t * m_b / (np.sqrt(v_b) + eps)

    z = X @ w + b
    p = 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))
    mse = float(((p - y) ** 2).mean())
    p_clip = np.clip(p, 1e-12, 1 - 1e-12)
    ll = float(-(y * np.log(p_clip) + (1 - y) * np.log(1 - p_clip)).mean())
    zo = float(((p >= 0.5) != y).mean())
    return SeparabilityReport(mse, ll, zo)
