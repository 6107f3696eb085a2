"""Probabilistic binary base classifiers and their training loop.

Two model kinds share one flat parameter vector convention:

* ``mlp_head``: dense(D -> hidden, ReLU) -> dense(hidden -> 2) -> softmax
* ``logistic``: sigmoid(w . x + b), reported as the pair (1 - p, p)

Both reduce to a single logit difference ``d = z_pos - z_healthy``, so the
two-class softmax is evaluated as ``p_healthy = sigmoid(-d)`` and
``p_positive = 1 - p_healthy``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from . import kernels
from .dataset import Dataset
from .errors import ConfigError, DataError, TrainingDivergedError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

UNIT_FORMAT = "balens.unit"
UNIT_VERSION = 1


@dataclass(frozen=True)
class ClassifierSpec:
    input_dim: int
    kind: Literal["mlp_head", "logistic"] = "mlp_head"
    hidden_units: int = 64

    def __post_init__(self):
        if self.kind not in ("mlp_head", "logistic"):
            raise ConfigError(f"unknown classifier kind {self.kind!r}")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if self.kind == "mlp_head" and self.hidden_units < 1:
            raise ConfigError("hidden_units must be >= 1")

    @property
    def n_params(self) -> int:
        D, H = self.input_dim, self.hidden_units
        if self.kind == "logistic":
            return D + 1
        return H * D + H + 2 * H + 2


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    lr_decay_per_epoch: float = 0.99
    batch_size: int = 1
    max_epochs: int = 100
    early_stop_patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ConfigError("lr_decay_per_epoch must lie in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float


@dataclass(frozen=True, eq=False)
class TrainedUnit:
    spec: ClassifierSpec
    parameters: np.ndarray
    history: tuple[EpochRecord, ...]
    stopped_epoch: int
    best_epoch: int
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        theta = np.array(self.parameters, dtype=np.float64)
        if theta.shape != (self.spec.n_params,):
            raise DataError(f"expected {self.spec.n_params} parameters, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise DataError("non-finite parameters")
        theta.setflags(write=False)
        object.__setattr__(self, "parameters", theta)
        object.__setattr__(self, "history", tuple(self.history))


def init_params(spec: ClassifierSpec, rng: np.random.Generator) -> np.ndarray:
    """He-normal weights, zero biases."""
    D, H = spec.input_dim, spec.hidden_units
    if spec.kind == "logistic":
        return np.concatenate([rng.normal(0.0, math.sqrt(2.0 / D), D), [0.0]])
    W1 = rng.normal(0.0, math.sqrt(2.0 / D), H * D)
    W2 = rng.normal(0.0, math.sqrt(2.0 / H), 2 * H)
    return np.concatenate([W1, np.zeros(H), W2, np.zeros(2)])


def _unpack_mlp(spec: ClassifierSpec, theta: np.ndarray):
    D, H = spec.input_dim, spec.hidden_units
    o1, o2, o3 = H * D, H * D + H, H * D + 3 * H
    return theta[:o1].reshape(H, D), theta[o1:o2], theta[o2:o3].reshape(2, H), theta[o3:]


def _check_X(spec: ClassifierSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise DataError(f"feature dimension mismatch: model expects {spec.input_dim}, got {X.shape[-1]}")
    return X


def logit_difference(spec: ClassifierSpec, theta: np.ndarray, X) -> np.ndarray:
    """``z_positive - z_healthy`` for each row of ``X``."""
    X = _check_X(spec, X)
    if spec.kind == "logistic":
        return X @ theta[:-1] + theta[-1]
    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    h = np.maximum(X @ W1.T + b1, 0.0)
    z = h @ W2.T + b2
    return z[:, 1] - z[:, 0]


def _sigmoid(d):
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def forward_params(spec: ClassifierSpec, theta: np.ndarray, X) -> np.ndarray:
    """Class probabilities, shape ``(n, 2)``: columns (healthy, positive)."""
    p_healthy = _sigmoid(-logit_difference(spec, theta, X))
    return np.stack([p_healthy, 1.0 - p_healthy], axis=1)


def forward(unit: TrainedUnit, x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("forward takes a single feature vector")
    p = forward_params(unit.spec, unit.parameters, x)[0]
    return float(p[0]), float(p[1])


def predict_proba(unit: TrainedUnit, x) -> float:
    return forward(unit, x)[1]


def predict_proba_batch(unit: TrainedUnit, X) -> np.ndarray:
    return forward_params(unit.spec, unit.parameters, X)[:, 1]


def mean_loss(spec: ClassifierSpec, theta: np.ndarray, X, y) -> float:
    """Mean binary cross-entropy."""
    d = logit_difference(spec, theta, X)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d))) - y * d))


def loss_and_grad(spec: ClassifierSpec, theta: np.ndarray, X, y) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over ``X`` and its gradient with respect to ``theta``."""
    X = _check_X(spec, X)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if spec.kind == "logistic":
        d = X @ theta[:-1] + theta[-1]
        g = (_sigmoid(d) - y) / n
        grad = np.concatenate([g @ X, [g.sum()]])
    else:
        W1, b1, W2, b2 = _unpack_mlp(spec, theta)
        pre = X @ W1.T + b1
        h = np.maximum(pre, 0.0)
        z = h @ W2.T + b2
        d = z[:, 1] - z[:, 0]
        g = (_sigmoid(d) - y) / n
        dz = np.stack([-g, g], axis=1)
        dpre = np.outer(g, W2[1] - W2[0]) * (pre > 0)
        grad = np.concatenate([(dpre.T @ X).ravel(), dpre.sum(0), (dz.T @ h).ravel(), dz.sum(0)])
    loss = float(np.mean(np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d))) - y * d))
    return loss, grad


class EarlyStopping:
    """Track the best validation loss; signal a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.best_params = None
        self.wait = 0

    def update(self, epoch: int, loss: float, params: np.ndarray) -> bool:
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_params = params.copy()
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


def train(
    spec: ClassifierSpec,
    config: TrainConfig,
    bag,
    validation: Dataset,
    backend: str | None = None,
) -> TrainedUnit:
    """Fit one unit by Adam on mean cross-entropy with validation early stopping.

    ``bag`` is a :class:`~balens.resampling.TrainingBag` or a plain
    :class:`Dataset`. The returned parameters are those of the epoch with the
    lowest validation loss.
    """
    data: Dataset = getattr(bag, "data", bag)
    if len(data) == 0 or len(validation) == 0:
        raise DataError("training and validation data must be non-empty")
    if data.feature_dim != spec.input_dim or validation.feature_dim != spec.input_dim:
        raise DataError(
            f"feature dimension mismatch: spec {spec.input_dim}, "
            f"train {data.feature_dim}, validation {validation.feature_dim}"
        )
    kern = kernels.get(backend)
    rng = np.random.default_rng(config.seed)
    theta = init_params(spec, rng)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    X = data.features
    y = data.labels.astype(np.float64)
    Xv = validation.features
    yv = validation.labels.astype(np.float64)

    stopper = EarlyStopping(config.early_stop_patience)
    history = []
    lr = config.learning_rate
    t = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(data)).astype(np.int64)
        if spec.kind == "logistic":
            t, _ = kern.adam_epoch_logistic(
                theta, m, v, t, X, y, order, lr, config.batch_size, ADAM_BETA1, ADAM_BETA2, ADAM_EPS
            )
        else:
            t, _ = kern.adam_epoch_mlp(
                theta, m, v, t, X, y, order, lr, config.batch_size, spec.hidden_units,
                ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
            )
        lr *= config.lr_decay_per_epoch
        train_loss = mean_loss(spec, theta, X, y) if np.all(np.isfinite(theta)) else math.nan
        val_loss = mean_loss(spec, theta, Xv, yv) if math.isfinite(train_loss) else math.nan
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch} (train={train_loss}, validation={val_loss}, "
                f"learning rate={lr / config.lr_decay_per_epoch:g}, seed={config.seed})"
            )
        history.append(EpochRecord(epoch, train_loss, val_loss))
        if stopper.update(epoch, val_loss, theta):
            break
    return TrainedUnit(
        spec=spec,
        parameters=stopper.best_params,
        history=tuple(history),
        stopped_epoch=epoch,
        best_epoch=stopper.best_epoch,
        config=config,
    )


# -- serialization ---------------------------------------------------------


def unit_to_dict(unit: TrainedUnit) -> dict:
    return {
        "format": UNIT_FORMAT,
        "version": UNIT_VERSION,
        "spec": asdict(unit.spec),
        "config": asdict(unit.config),
        "parameters": [float(p) for p in unit.parameters],
        "history": [asdict(r) for r in unit.history],
        "stopped_epoch": unit.stopped_epoch,
        "best_epoch": unit.best_epoch,
    }


def unit_from_dict(d: dict) -> TrainedUnit:
    if d.get("format") != UNIT_FORMAT:
        raise DataError(f"not a model file (format={d.get('format')!r})")
    if d.get("version") != UNIT_VERSION:
        raise DataError(f"unsupported model file version {d.get('version')!r}")
    try:
        return TrainedUnit(
            spec=ClassifierSpec(**d["spec"]),
            parameters=np.array(d["parameters"], dtype=np.float64),
            history=tuple(EpochRecord(**r) for r in d["history"]),
            stopped_epoch=int(d["stopped_epoch"]),
            best_epoch=int(d["best_epoch"]),
            config=TrainConfig(**d["config"]),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"corrupt model file: {exc}") from None


def save_unit(unit: TrainedUnit, path: str | os.PathLike) -> None:
    from .io import atomic_write

    atomic_write(path, json.dumps(unit_to_dict(unit), indent=1))


def load_unit(path: str | os.PathLike) -> TrainedUnit:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read model file: {exc}") from None
    return unit_from_dict(d)
