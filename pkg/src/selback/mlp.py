"""One-hidden-layer binary MLP with analytic gradients.

Forward: sigmoid(W2 . relu(W1 x + b1) + b2), where x is a binary sparse
vector. The predicted probability is P(malicious); predict = proba >= 0.5.
Inputs are accepted as scipy CSR matrices (sparse paths touch only active
columns) or dense arrays (needed when inputs are relaxed to [0,1]^q during
trigger optimization). Dropout is inverted at train time and disabled for
all inference and input-gradient paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .data import Dataset, FeatureVector
from .errors import ConfigError, DataError, DivergenceError


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: int
    dropout: float = 0.2

    def __post_init__(self) -> None:
        if self.hidden < 1:
            raise ConfigError("hidden width must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class MlpModel:
    spec: MlpSpec
    W1: np.ndarray  # (h, q)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h,)
    b2: float

    def copy(self) -> "MlpModel":
        return MlpModel(self.spec, self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2)

    def check_finite(self) -> None:
        if not (
            np.isfinite(self.W1).all()
            and np.isfinite(self.b1).all()
            and np.isfinite(self.W2).all()
            and np.isfinite(self.b2)
        ):
            raise DivergenceError("model parameters are not finite")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0  # decoupled L2 on W1/W2
    init_scale: float | None = None  # None -> Glorot uniform
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


def init_model(spec: MlpSpec, seed: int, init_scale: float | None = None) -> MlpModel:
    rng = np.random.default_rng(seed)
    if init_scale is None:
        lim1 = np.sqrt(6.0 / (spec.input_dim + spec.hidden))
        lim2 = np.sqrt(6.0 / (spec.hidden + 1))
    else:
        lim1 = lim2 = float(init_scale)
    W1 = rng.uniform(-lim1, lim1, size=(spec.hidden, spec.input_dim))
    b1 = np.zeros(spec.hidden)
    W2 = rng.uniform(-lim2, lim2, size=spec.hidden)
    return MlpModel(spec, W1, b1, W2, 0.0)


def _as_2d(x: np.ndarray) -> np.ndarray:
    return x[None, :] if x.ndim == 1 else x


def _pre_activations(model: MlpModel, X) -> np.ndarray:
    """W1 x + b1 for a CSR or dense batch, shape (n, h)."""
    if sparse.issparse(X):
        return X @ model.W1.T + model.b1
    return _as_2d(np.asarray(X, dtype=np.float64)) @ model.W1.T + model.b1


def logits(model: MlpModel, X) -> np.ndarray:
    H = np.maximum(_pre_activations(model, X), 0.0)
    return H @ model.W2 + model.b2


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_from_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy, numerically stable."""
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def predict_proba_matrix(model: MlpModel, X) -> np.ndarray:
    """P(malicious) for each row of a CSR or dense batch."""
    if X.shape[-1] != model.spec.input_dim:
        raise DataError(
            f"input dim {X.shape[-1]} does not match model dim {model.spec.input_dim}"
        )
    return sigmoid(logits(model, X))


def predict_proba(model: MlpModel, x: FeatureVector) -> float:
    if x.dim != model.spec.input_dim:
        raise DataError(
            f"input dim {x.dim} does not match model dim {model.spec.input_dim}"
        )
    z = model.W1[:, list(x.active)].sum(axis=1) + model.b1 if x.active else model.b1
    h = np.maximum(z, 0.0)
    return float(sigmoid(np.atleast_1d(h @ model.W2 + model.b2))[0])


def hidden_activations(model: MlpModel, x: FeatureVector) -> np.ndarray:
    if x.dim != model.spec.input_dim:
        raise DataError(
            f"input dim {x.dim} does not match model dim {model.spec.input_dim}"
        )
    z = model.W1[:, list(x.active)].sum(axis=1) + model.b1 if x.active else model.b1
    return np.maximum(z, 0.0)


def hidden_activations_matrix(model: MlpModel, X) -> np.ndarray:
    return np.maximum(_pre_activations(model, X), 0.0)


class AdamState:
    """Per-parameter first/second moment buffers."""

    def __init__(self, model: MlpModel):
        self.t = 0
        self.m = {
            "W1": np.zeros_like(model.W1),
            "b1": np.zeros_like(model.b1),
            "W2": np.zeros_like(model.W2),
            "b2": 0.0,
        }
        self.v = {
            "W1": np.zeros_like(model.W1),
            "b1": np.zeros_like(model.b1),
            "W2": np.zeros_like(model.W2),
            "b2": 0.0,
        }


def weighted_param_grads(
    model: MlpModel,
    X,
    y: np.ndarray,
    weights: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, dict]:
    """Gradients of sum_i weights_i * CE_i w.r.t. all parameters.

    Dropout (inverted) is applied to the hidden layer iff ``dropout_rng`` is
    given and the spec has a nonzero rate.
    """
    Z1 = _pre_activations(model, X)
    H = np.maximum(Z1, 0.0)
    if dropout_rng is not None and model.spec.dropout > 0.0:
        keep = 1.0 - model.spec.dropout
        mask = (dropout_rng.random(H.shape) < keep) / keep
        H = H * mask
    else:
        mask = None
    z = H @ model.W2 + model.b2
    p = sigmoid(z)
    loss = float(np.dot(bce_from_logits(z, y), weights))

    dz = (p - y) * weights
    gW2 = H.T @ dz
    gb2 = float(dz.sum())
    dH = np.outer(dz, model.W2)
    if mask is not None:
        dH *= mask
    dH[Z1 <= 0.0] = 0.0
    if sparse.issparse(X):
        gW1 = (X.T @ dH).T
    else:
        gW1 = dH.T @ _as_2d(np.asarray(X, dtype=np.float64))
    gb1 = dH.sum(axis=0)
    return loss, {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def adam_step(model: MlpModel, grads: dict, state: AdamState, cfg: TrainConfig) -> None:
    state.t += 1
    lr_t = cfg.learning_rate * np.sqrt(1.0 - cfg.beta2**state.t) / (1.0 - cfg.beta1**state.t)
    for name in ("W1", "b1", "W2"):
        g = grads[name]
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        param = getattr(model, name)
        if cfg.weight_decay and name != "b1":
            param *= 1.0 - cfg.learning_rate * cfg.weight_decay
        param -= lr_t * state.m[name] / (np.sqrt(state.v[name]) + cfg.eps)
    state.m["b2"] = cfg.beta1 * state.m["b2"] + (1.0 - cfg.beta1) * grads["b2"]
    state.v["b2"] = cfg.beta2 * state.v["b2"] + (1.0 - cfg.beta2) * grads["b2"] ** 2
    model.b2 -= lr_t * state.m["b2"] / (np.sqrt(state.v["b2"]) + cfg.eps)


def train_on_matrix(
    model: MlpModel,
    X,
    y: np.ndarray,
    cfg: TrainConfig,
    epochs: int | None = None,
    rng: np.random.Generator | None = None,
    adam: AdamState | None = None,
) -> MlpModel:
    """Minibatch cross-entropy training; returns a new trained model."""
    n = X.shape[0]
    if n == 0:
        raise DataError("training requires a nonempty dataset")
    model = model.copy()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    adam = adam if adam is not None else AdamState(model)
    epochs = cfg.epochs if epochs is None else epochs
    y = np.asarray(y, dtype=np.float64)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            Xb = X[idx]
            yb = y[idx]
            w = np.full(idx.size, 1.0 / idx.size)
            loss, grads = weighted_param_grads(model, Xb, yb, w, dropout_rng=rng)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            adam_step(model, grads, adam, cfg)
    model.check_finite()
    return model


def train(model: MlpModel, ds: Dataset, cfg: TrainConfig) -> MlpModel:
    return train_on_matrix(model, ds.to_csr(), ds.labels_array(), cfg)


def input_gradient_batch(
    model: MlpModel, X_dense: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample CE losses and d CE_i / d x_i for a dense batch (no dropout)."""
    X_dense = _as_2d(np.asarray(X_dense, dtype=np.float64))
    Z1 = X_dense @ model.W1.T + model.b1
    H = np.maximum(Z1, 0.0)
    z = H @ model.W2 + model.b2
    p = sigmoid(z)
    losses = bce_from_logits(z, np.asarray(y, dtype=np.float64))
    dz = p - y
    dH = np.outer(dz, model.W2)
    dH[Z1 <= 0.0] = 0.0
    return losses, dH @ model.W1


def proba_input_gradients(
    model: MlpModel, X_dense: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """P(malicious) per row and d p_i / d x_i, shape (n, q); no dropout."""
    X_dense = _as_2d(np.asarray(X_dense, dtype=np.float64))
    Z1 = X_dense @ model.W1.T + model.b1
    H = np.maximum(Z1, 0.0)
    z = H @ model.W2 + model.b2
    p = sigmoid(z)
    dH = np.where(Z1 > 0.0, model.W2, 0.0)
    dz_dx = dH @ model.W1
    return p, (p * (1.0 - p))[:, None] * dz_dx


def input_gradient(model: MlpModel, x_dense: np.ndarray, target_label: int) -> np.ndarray:
    """Exact gradient of the cross-entropy toward ``target_label`` at x."""
    losses, grad = input_gradient_batch(
        model, np.asarray(x_dense, dtype=np.float64)[None, :], np.array([float(target_label)])
    )
    return grad[0]


def save_model(model: MlpModel, path: str | Path) -> None:
    obj = {
        "spec": {
            "input_dim": model.spec.input_dim,
            "hidden": model.spec.hidden,
            "dropout": model.spec.dropout,
        },
        "W1": model.W1.ravel().tolist(),
        "b1": model.b1.tolist(),
        "W2": model.W2.tolist(),
        "b2": model.b2,
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_model(path: str | Path) -> MlpModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    with open(path) as fh:
        obj = json.load(fh)
    spec = MlpSpec(
        int(obj["spec"]["input_dim"]),
        int(obj["spec"]["hidden"]),
        float(obj["spec"]["dropout"]),
    )
    W1 = np.array(obj["W1"], dtype=np.float64).reshape(spec.hidden, spec.input_dim)
    model = MlpModel(
        spec,
        W1,
        np.array(obj["b1"], dtype=np.float64),
        np.array(obj["W2"], dtype=np.float64),
        float(obj["b2"]),
    )
    model.check_finite()
    return model
