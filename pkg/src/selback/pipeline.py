"""End-to-end experiment orchestration: splits, target training, pools.

The defender never trains on the target family's samples (that malware is
the attacker's own, not yet public); the attacker solves the trigger on the
train split and supplies the clean-label poison set. All repeated trainings
derive per-index seeds from the experiment master seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .attack import (
    AttackConfig,
    AttackResult,
    PoisonSet,
    build_poison_set,
    optimize_trigger,
    universal_baseline_trigger,
)
from .data import Dataset, split_train_test
from .errors import ConfigError, DataError
from .features import SvmConfig, rank_benign_features
from .metrics import (
    AttackMetrics,
    EvalPartition,
    compute_metrics,
    f1_score,
    split_eval_partition,
)
from .mlp import MlpModel, MlpSpec, TrainConfig, init_model, predict_proba_matrix, train_on_matrix
from .parallel import farm_context, farm_map
from .seeding import derive_seed


@dataclass
class ExperimentSplit:
    train: Dataset  # attacker's best-case view (includes the target family)
    test: Dataset
    defender_train: Dataset  # train minus the target family
    target_family: str

    @property
    def dim(self) -> int:
        return self.train.dim


def make_split(
    ds: Dataset, target_family: str, train_fraction: float, seed: int
) -> ExperimentSplit:
    if target_family not in ds.families():
        raise DataError(f"family {target_family!r} not present in the dataset")
    train_ds, test_ds = split_train_test(ds, train_fraction, seed)
    t_rows = train_ds.family_indices(target_family)
    keep = np.setdiff1d(np.arange(len(train_ds)), t_rows)
    return ExperimentSplit(train_ds, test_ds, train_ds.subset(keep), target_family)


def train_target_model(
    defender_train: Dataset,
    poison: Dataset | None,
    spec: MlpSpec,
    cfg: TrainConfig,
) -> MlpModel:
    data = defender_train.concat(poison) if poison is not None else defender_train
    model = init_model(spec, cfg.seed)
    return train_on_matrix(model, data.to_csr(), data.labels_array(), cfg)


@dataclass
class MetricsSummary:
    per_repeat: list[AttackMetrics]
    f1_clean: list[float]

    def _mean_std(self, values: list[float | None]) -> tuple[float | None, float | None]:
        present = [v for v in values if v is not None]
        if not present:
            return None, None
        return float(np.mean(present)), float(np.std(present))

    def mean(self) -> dict:
        out = {}
        for key in ("asr_target", "asr_remaining", "fpr_benign_triggered", "f1_main"):
            m, s = self._mean_std([getattr(r, key) for r in self.per_repeat])
            out[key] = m
            out[key + "_std"] = s
        out["f1_clean"] = float(np.mean(self.f1_clean))
        out["trigger_size"] = self.per_repeat[0].trigger_size if self.per_repeat else 0
        out["repeats"] = len(self.per_repeat)
        return out


def evaluate_trigger(
    split: ExperimentSplit,
    trigger: np.ndarray,
    poison: PoisonSet,
    target_spec: MlpSpec,
    target_cfg: TrainConfig,
    repeats: int,
    master_seed: int,
) -> MetricsSummary:
    """Train clean/poisoned target pairs over seeds and average the metrics."""
    partition = split_eval_partition(split.test, split.target_family)
    poison_ds = poison.to_dataset(split.dim)
    results = []
    f1_clean = []
    test_labels = split.test.labels_array()
    for rep in range(repeats):
        clean_cfg = _reseed(target_cfg, derive_seed(master_seed, "target-clean", rep))
        pois_cfg = _reseed(target_cfg, derive_seed(master_seed, "target-poisoned", rep))
        clean = train_target_model(split.defender_train, None, target_spec, clean_cfg)
        poisoned = train_target_model(split.defender_train, poison_ds, target_spec, pois_cfg)
        results.append(compute_metrics(clean, poisoned, partition, trigger))
        preds = (predict_proba_matrix(clean, split.test.to_csr()) >= 0.5).astype(int)
        f1_clean.append(f1_score(test_labels, preds))
    return MetricsSummary(results, f1_clean)


def _reseed(cfg: TrainConfig, seed: int) -> TrainConfig:
    from dataclasses import replace

    return replace(cfg, seed=seed)


@dataclass
class JigsawRunResult:
    attack: AttackResult
    trigger: np.ndarray
    summary: MetricsSummary


def run_jigsaw_attack(
    split: ExperimentSplit,
    attack_cfg: AttackConfig,
    local_spec: MlpSpec,
    target_spec: MlpSpec,
    target_cfg: TrainConfig,
    repeats: int,
    master_seed: int,
    support: np.ndarray | None = None,
    trigger_override: np.ndarray | None = None,
) -> JigsawRunResult:
    """Solve the selective trigger, then measure it against fresh targets.

    ``trigger_override`` replaces the solved mask's binary view (used for
    problem-space realization, where side-effect features join the trigger);
    the poison set is rebuilt with the effective trigger either way.
    """
    attack = optimize_trigger(
        split.train, split.target_family, attack_cfg, local_spec, support=support
    )
    trigger = (
        np.asarray(trigger_override, dtype=np.int64)
        if trigger_override is not None
        else attack.trigger_indices
    )
    poison = build_poison_set(
        split.train,
        trigger,
        attack_cfg.poison_count,
        derive_seed(attack_cfg.seed, "poison-set"),
    )
    summary = evaluate_trigger(
        split, trigger, poison, target_spec, target_cfg, repeats, master_seed
    )
    return JigsawRunResult(attack, trigger, summary)


@dataclass
class UniversalRunResult:
    trigger: np.ndarray
    summary: MetricsSummary
    asr_all_malware: list[float]


def run_universal_attack(
    split: ExperimentSplit,
    trigger_size: int,
    poison_count: int,
    target_spec: MlpSpec,
    target_cfg: TrainConfig,
    repeats: int,
    master_seed: int,
    svm_cfg: SvmConfig = SvmConfig(),
) -> UniversalRunResult:
    """Top-benign-feature universal backdoor, poison-trained and evaluated."""
    ranking = rank_benign_features(split.train, svm_cfg)
    trigger = universal_baseline_trigger(ranking, trigger_size)
    poison = build_poison_set(
        split.train, trigger, poison_count, derive_seed(master_seed, "uni-poison")
    )
    summary = evaluate_trigger(
        split, trigger, poison, target_spec, target_cfg, repeats, master_seed
    )
    asr_all = []
    for m in summary.per_repeat:
        n_t = m.eligible_counts.get("target", 0)
        n_r = m.eligible_counts.get("remaining", 0)
        parts = [
            (m.asr_target, n_t),
            (m.asr_remaining, n_r),
        ]
        total = sum(n for v, n in parts if v is not None)
        if total:
            asr_all.append(sum(v * n for v, n in parts if v is not None) / total)
    return UniversalRunResult(trigger, summary, asr_all)


def _train_pool_model(payload: tuple[int, str]) -> MlpModel:
    index, kind = payload
    ctx = farm_context()
    csr: sparse.csr_matrix = ctx["csr"]
    labels: np.ndarray = ctx["labels"]
    benign_rows: np.ndarray = ctx["benign_rows"]
    spec: MlpSpec = ctx["spec"]
    base_cfg: TrainConfig = ctx["cfg"]
    subsample: float = ctx["subsample"]
    master_seed: int = ctx["master_seed"]
    trigger = ctx["triggers"].get(kind)
    rate_range = ctx["poison_rate_range"]

    seed = derive_seed(master_seed, f"pool-{kind}", index)
    rng = np.random.default_rng(seed)
    n = csr.shape[0]
    rows = rng.choice(n, size=max(2, int(round(subsample * n))), replace=False)
    X = csr[rows]
    y = labels[rows].astype(np.float64)

    if trigger is not None:
        rate = rng.uniform(*rate_range)
        n_poison = max(1, int(round(rate * n)))
        chosen = rng.choice(benign_rows, size=min(n_poison, benign_rows.size), replace=False)
        poisoned = csr[chosen].toarray()
        poisoned[:, trigger] = 1.0
        X = sparse.vstack([X, sparse.csr_matrix(poisoned)])
        y = np.concatenate([y, np.zeros(chosen.size)])

    cfg = _reseed(base_cfg, seed)
    model = init_model(spec, seed)
    return train_on_matrix(model, X, y, cfg)


def build_target_pool(
    defender_train: Dataset,
    spec: MlpSpec,
    cfg: TrainConfig,
    n_models: int,
    kind: str,
    trigger: np.ndarray | None,
    master_seed: int,
    subsample: float = 0.5,
    poison_rate_range: tuple[float, float] = (0.001, 0.002),
    workers: int = 1,
) -> list[MlpModel]:
    """Independently trained target models; poisoned ones get the trigger
    injected into freshly drawn benign samples at a rate from the range."""
    context = {
        "csr": defender_train.to_csr(),
        "labels": defender_train.labels_array(),
        "benign_rows": defender_train.benign_indices(),
        "spec": spec,
        "cfg": cfg,
        "subsample": subsample,
        "master_seed": master_seed,
        "triggers": {kind: trigger} if trigger is not None else {},
        "poison_rate_range": poison_rate_range,
    }
    payloads = [(i, kind) for i in range(n_models)]
    return farm_map(_train_pool_model, payloads, workers, context)
