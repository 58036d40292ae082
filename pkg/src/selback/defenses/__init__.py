"""Backdoor defenses adapted to binary sparse-feature classifiers."""

from .strip import StripConfig, StripReport, strip_entropy, strip_evaluate
from .clustering import AcConfig, AcReport, activation_cluster, fast_ica, kmeans, silhouette_score
from .cleanse import NcConfig, NcResult, nc_reverse_trigger
from .mntd import (
    MntdConfig,
    MetaClassifier,
    ShadowModelSet,
    jumbo_sample_trigger,
    mntd_evaluate,
    train_meta,
    train_shadow_models,
)

__all__ = [
    "StripConfig",
    "StripReport",
    "strip_entropy",
    "strip_evaluate",
    "AcConfig",
    "AcReport",
    "activation_cluster",
    "fast_ica",
    "kmeans",
    "silhouette_score",
    "NcConfig",
    "NcResult",
    "nc_reverse_trigger",
    "MntdConfig",
    "MetaClassifier",
    "ShadowModelSet",
    "jumbo_sample_trigger",
    "mntd_evaluate",
    "train_meta",
    "train_shadow_models",
]
