"""Activation clustering over last-hidden-layer activations.

Per class: collect hidden activations, reduce to 10 dimensions with FastICA
(whitening + deflationary fixed point, tanh contrast), split with 2-means,
and report relative cluster sizes plus the mean silhouette. The two
published decision heuristics (a cluster smaller than 0.35 of the class, or
a silhouette above 0.10-0.15) are reported as flags, not enforced, because
this domain routinely trips them on unpoisoned classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Dataset
from ..errors import ConfigError, DataError
from ..mlp import MlpModel, hidden_activations_matrix

# E[log cosh(u)] for standard normal u; negentropy proxy reference point.
_LOGCOSH_GAUSS = 0.374567207491438


def fast_ica(
    X: np.ndarray,
    n_components: int,
    seed: int = 0,
    restarts: int = 5,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> np.ndarray:
    """Independent components of X (rows = observations), unit variance.

    Deflationary FastICA with tanh nonlinearity on whitened data; among
    ``restarts`` seeded runs the one with the largest log-cosh negentropy
    proxy is kept.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise DataError("FastICA requires at least two observations")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / n
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    usable = eigval > 1e-12
    k = min(n_components, int(usable.sum()))
    if k == 0:
        raise DataError("activations are degenerate (zero variance)")
    whitener = eigvec[:, :k] / np.sqrt(eigval[:k])
    Z = Xc @ whitener  # (n, k), identity covariance

    best_S = None
    best_score = -np.inf
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        W = np.zeros((k, k))
        for i in range(k):
            w = rng.normal(size=k)
            w /= np.linalg.norm(w)
            for _ in range(max_iter):
                u = Z @ w
                g = np.tanh(u)
                g_prime = 1.0 - g * g
                w_new = (Z.T @ g) / n - g_prime.mean() * w
                if i > 0:
                    w_new -= W[:i].T @ (W[:i] @ w_new)
                norm = np.linalg.norm(w_new)
                if norm < 1e-12:
                    w_new = rng.normal(size=k)
                    norm = np.linalg.norm(w_new)
                w_new /= norm
                if abs(abs(w_new @ w) - 1.0) < tol:
                    w = w_new
                    break
                w = w_new
            W[i] = w
        S = Z @ W.T
        score = float((((np.log(np.cosh(S))).mean(axis=0) - _LOGCOSH_GAUSS) ** 2).sum())
        if score > best_score:
            best_score = score
            best_S = S
    return best_S


def kmeans(
    X: np.ndarray,
    k: int = 2,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 300,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd's algorithm with seeded k-means++ restarts; lowest inertia wins."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < k:
        raise DataError(f"k-means needs at least {k} points")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        centers = _kmeanspp_init(X, k, rng)
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(max_iter):
            d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = d2.argmin(axis=1)
            for c in range(k):
                members = X[new_labels == c]
                if members.shape[0]:
                    centers[c] = members.mean(axis=0)
                else:
                    centers[c] = X[rng.integers(n)]
            if (new_labels == labels).all():
                labels = new_labels
                break
            labels = new_labels
        inertia = float(((X - centers[labels]) ** 2).sum())
        if best is None or inertia < best[2]:
            best = (labels.copy(), centers.copy(), inertia)
    return best


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            [((X - c) ** 2).sum(axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
            continue
        probs = d2 / total
        centers.append(X[rng.choice(n, p=probs)])
    return np.array(centers, dtype=np.float64)


def silhouette_score(X: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over all points; singleton clusters score 0."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    n = X.shape[0]
    unique = np.unique(labels)
    if unique.size < 2:
        raise DataError("silhouette requires at least two clusters")
    sizes = {c: int((labels == c).sum()) for c in unique}
    scores = np.zeros(n)
    sq_norms = (X * X).sum(axis=1)
    chunk = 1024
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq_norms[start:stop, None] + sq_norms[None, :] - 2.0 * (X[start:stop] @ X.T)
        np.maximum(d2, 0.0, out=d2)
        dist = np.sqrt(d2)
        for row, i in enumerate(range(start, stop)):
            own = labels[i]
            if sizes[own] == 1:
                scores[i] = 0.0
                continue
            a = dist[row][labels == own].sum() / (sizes[own] - 1)
            b = min(
                dist[row][labels == c].mean() for c in unique if c != own
            )
            scores[i] = 0.0 if max(a, b) == 0 else (b - a) / max(a, b)
    return float(scores.mean())


@dataclass(frozen=True)
class AcConfig:
    n_components: int = 10
    size_threshold: float = 0.35
    silhouette_low: float = 0.10
    silhouette_high: float = 0.15
    ica_restarts: int = 5
    kmeans_restarts: int = 10
    seed: int = 0


@dataclass(frozen=True)
class AcReport:
    sizes: tuple[float, float]  # ascending, sums to 1
    silhouette: float
    reduced_dim: int
    size_rule_poisoned: bool
    silhouette_rule_low_poisoned: bool
    silhouette_rule_high_poisoned: bool

    def as_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "silhouette": self.silhouette,
            "reduced_dim": self.reduced_dim,
            "size_rule_poisoned": self.size_rule_poisoned,
            "silhouette_rule_low_poisoned": self.silhouette_rule_low_poisoned,
            "silhouette_rule_high_poisoned": self.silhouette_rule_high_poisoned,
        }


def activation_cluster(model: MlpModel, class_samples: Dataset, cfg: AcConfig = AcConfig()) -> AcReport:
    """Cluster one class's hidden activations and report the heuristics."""
    if len(class_samples) < 2:
        raise DataError("activation clustering needs at least two samples")
    acts = hidden_activations_matrix(model, class_samples.to_csr())
    if np.allclose(acts, acts[0]):
        raise DataError("all activation vectors are identical")
    reduced = fast_ica(
        acts, cfg.n_components, seed=cfg.seed, restarts=cfg.ica_restarts
    )
    labels, _, _ = kmeans(reduced, 2, seed=cfg.seed, restarts=cfg.kmeans_restarts)
    frac1 = float((labels == 1).mean())
    sizes = tuple(sorted((1.0 - frac1, frac1)))
    sil = silhouette_score(reduced, labels)
    return AcReport(
        sizes=sizes,
        silhouette=sil,
        reduced_dim=reduced.shape[1],
        size_rule_poisoned=sizes[0] < cfg.size_threshold,
        silhouette_rule_low_poisoned=sil >= cfg.silhouette_low,
        silhouette_rule_high_poisoned=sil >= cfg.silhouette_high,
    )
