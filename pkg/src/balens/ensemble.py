"""Ensembles of balanced-bag units: probability fusion, disagreement
uncertainty and referral.

The fused score of a sample is the plain mean of the unit positive-class
probabilities; its uncertainty is their population standard deviation. A
prediction is positive iff the fused score is strictly above 0.5, and is
referred for further testing iff its uncertainty exceeds the policy
threshold.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import (
    ClassifierSpec,
    TrainConfig,
    TrainedUnit,
    load_unit,
    predict_proba_batch,
    save_unit,
    train,
)
from .dataset import Dataset
from .errors import ConfigError, DataError
from .io import atomic_write, sha256_file
from .resampling import BagPlan, make_bags

POSITIVE_LABEL = "positive"
HEALTHY_LABEL = "healthy"

SUITE_FORMAT = "balens.suite"
SUITE_VERSION = 1


def derive_seed(base: int, index: int) -> int:
    """Deterministic 32-bit child seed of ``base`` for ``index``."""
    return int(np.random.SeedSequence([int(base) & 0xFFFFFFFF, int(index)]).generate_state(1)[0])


@dataclass(frozen=True)
class ReferralPolicy:
    sigma_threshold: float = 0.2
    escalation: tuple[str, ...] = ("repeat-audio-test", "clinical-test")

    def __post_init__(self):
        if not self.sigma_threshold >= 0:
            raise ConfigError("sigma_threshold must be >= 0")
        object.__setattr__(self, "escalation", tuple(self.escalation))


@dataclass(frozen=True, eq=False)
class EnsembleSuite:
    units: tuple[TrainedUnit, ...]
    plan: BagPlan
    unit_seeds: tuple[int, ...] = ()
    bag_ids: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        units = tuple(self.units)
        if not units:
            raise ConfigError("an ensemble needs at least one unit")
        if len({u.spec.input_dim for u in units}) != 1:
            raise ConfigError("ensemble units disagree on input dimension")
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "unit_seeds", tuple(self.unit_seeds))
        object.__setattr__(self, "bag_ids", tuple(tuple(b) for b in self.bag_ids))

    @property
    def input_dim(self) -> int:
        return self.units[0].spec.input_dim

    def __len__(self) -> int:
        return len(self.units)


@dataclass(frozen=True)
class Prediction:
    unit_probs: tuple[float, ...]
    mean_prob: float
    uncertainty: float
    decision: str
    referred: bool
    escalation: str | None = None
    id: str | None = None

    @property
    def is_positive(self) -> bool:
        return self.decision == POSITIVE_LABEL


@dataclass(frozen=True, eq=False)
class PredictionBatch:
    """Column-wise predictions for many samples; rows follow the input order."""

    ids: np.ndarray
    unit_probs: np.ndarray
    mean_prob: np.ndarray
    uncertainty: np.ndarray
    positive: np.ndarray
    referred: np.ndarray
    policy: ReferralPolicy

    def __len__(self) -> int:
        return len(self.mean_prob)

    def __getitem__(self, i: int) -> Prediction:
        referred = bool(self.referred[i])
        return Prediction(
            unit_probs=tuple(float(p) for p in self.unit_probs[i]),
            mean_prob=float(self.mean_prob[i]),
            uncertainty=float(self.uncertainty[i]),
            decision=POSITIVE_LABEL if self.positive[i] else HEALTHY_LABEL,
            referred=referred,
            escalation=self.policy.escalation[0] if referred and self.policy.escalation else None,
            id=None if self.ids is None else str(self.ids[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))


# -- fusion ----------------------------------------------------------------


def _probs(unit_probs) -> np.ndarray:
    p = np.asarray(unit_probs, dtype=np.float64)
    if p.size == 0 or p.shape[-1] == 0:
        raise ValueError("no unit probabilities")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("unit probabilities must lie in [0, 1]")
    return p


def fuse_probability(unit_probs):
    """Mean over the last axis; a float for a 1-D input."""
    p = _probs(unit_probs)
    mu = p.sum(axis=-1) / p.shape[-1]
    return float(mu) if p.ndim == 1 else mu


def uncertainty(unit_probs):
    """Population standard deviation over the last axis."""
    p = _probs(unit_probs)
    n = p.shape[-1]
    mu = p.sum(axis=-1, keepdims=True) / n
    sigma = np.sqrt(((p - mu) ** 2).sum(axis=-1) / n)
    return float(sigma) if p.ndim == 1 else sigma


def fuse_majority(unit_probs):
    """Majority vote of ``p > 0.5`` votes; ties fall back to the mean-probability decision."""
    p = _probs(unit_probs)
    n = p.shape[-1]
    votes = (p > 0.5).sum(axis=-1)
    mean_positive = p.sum(axis=-1) / n > 0.5
    positive = np.where(2 * votes == n, mean_positive, 2 * votes > n)
    if p.ndim == 1:
        return POSITIVE_LABEL if bool(positive) else HEALTHY_LABEL
    return positive


# -- training and inference ------------------------------------------------


def train_suite(
    train_data: Dataset,
    validation: Dataset,
    plan: BagPlan,
    spec: ClassifierSpec,
    config: TrainConfig,
    workers: int = 1,
    backend: str | None = None,
) -> EnsembleSuite:
    """Train one unit per bag against the shared validation set.

    Unit ``i`` (1-based) is seeded with ``derive_seed(plan.seed, i)``, so the
    result does not depend on ``workers``.
    """
    bags = make_bags(train_data, plan)
    seeds = [derive_seed(plan.seed, bag.index) for bag in bags]

    def fit(args):
        bag, seed = args
        return train(spec, replace(config, seed=seed), bag, validation, backend=backend)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            units = list(pool.map(fit, zip(bags, seeds)))
    else:
        units = [fit(a) for a in zip(bags, seeds)]
    return EnsembleSuite(
        units=tuple(units),
        plan=plan,
        unit_seeds=tuple(seeds),
        bag_ids=tuple(tuple(str(i) for i in bag.data.ids) for bag in bags),
    )


def unit_probabilities(suite: EnsembleSuite, X) -> np.ndarray:
    """Positive-class probability of every unit, shape ``(n_samples, n_units)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != suite.input_dim:
        raise DataError(f"feature dimension mismatch: suite expects {suite.input_dim}, got {X.shape[1]}")
    return np.column_stack([predict_proba_batch(u, X) for u in suite.units])


def predict_batch(suite: EnsembleSuite, data, policy: ReferralPolicy | None = None) -> PredictionBatch:
    """Predictions for a :class:`Dataset` or a feature matrix."""
    policy = policy or ReferralPolicy()
    if isinstance(data, Dataset):
        ids, X = data.ids, data.features
    else:
        X = np.asarray(data, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        ids = np.array([str(i) for i in range(X.shape[0])], dtype=object)
    P = unit_probabilities(suite, X)
    mu = fuse_probability(P)
    sigma = uncertainty(P)
    return PredictionBatch(
        ids=ids,
        unit_probs=P,
        mean_prob=mu,
        uncertainty=sigma,
        positive=mu > 0.5,
        referred=sigma > policy.sigma_threshold,
        policy=policy,
    )


def predict(suite: EnsembleSuite, x, policy: ReferralPolicy | None = None) -> Prediction:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("predict takes a single feature vector; use predict_batch for matrices")
    return predict_batch(suite, x[None, :], policy)[0]


def prediction_from_probs(unit_probs: Sequence[float], policy: ReferralPolicy | None = None) -> Prediction:
    """Assemble a :class:`Prediction` directly from unit probabilities."""
    policy = policy or ReferralPolicy()
    mu = fuse_probability(unit_probs)
    sigma = uncertainty(unit_probs)
    referred = sigma > policy.sigma_threshold
    return Prediction(
        unit_probs=tuple(float(p) for p in unit_probs),
        mean_prob=mu,
        uncertainty=sigma,
        decision=POSITIVE_LABEL if mu > 0.5 else HEALTHY_LABEL,
        referred=referred,
        escalation=policy.escalation[0] if referred and policy.escalation else None,
    )


# -- I/O -------------------------------------------------------------------


def write_predictions(batch: PredictionBatch, path: str | os.PathLike) -> None:
    from .io import write_csv

    rows = (
        (batch.ids[i], float(batch.mean_prob[i]), float(batch.uncertainty[i]),
         POSITIVE_LABEL if batch.positive[i] else HEALTHY_LABEL, bool(batch.referred[i]))
        for i in range(len(batch))
    )
    write_csv(path, ["id", "mean_prob", "uncertainty", "decision", "referred"], rows)


def save_suite(suite: EnsembleSuite, directory: str | os.PathLike) -> Path:
    """Write ``manifest.json``, one JSON file per unit and one id list per bag."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, unit in enumerate(suite.units, start=1):
        name = f"unit_{i:02d}.json"
        save_unit(unit, directory / name)
        files.append(name)
    bag_files = []
    for i, ids in enumerate(suite.bag_ids, start=1):
        name = f"bags/bag_{i:02d}.txt"
        atomic_write(directory / name, "\n".join(ids) + "\n")
        bag_files.append(name)
    manifest = {
        "format": SUITE_FORMAT,
        "version": SUITE_VERSION,
        "plan": asdict(suite.plan),
        "unit_seeds": list(suite.unit_seeds),
        "units": files,
        "bags": bag_files,
        "checksums": {name: sha256_file(directory / name) for name in files + bag_files},
    }
    atomic_write(directory / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def load_suite(directory: str | os.PathLike) -> EnsembleSuite:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{directory}: cannot read suite manifest: {exc}") from None
    if manifest.get("format") != SUITE_FORMAT or manifest.get("version") != SUITE_VERSION:
        raise DataError(f"{directory}: not a version-{SUITE_VERSION} suite manifest")
    for name, digest in manifest.get("checksums", {}).items():
        path = directory / name
        if not path.is_file() or sha256_file(path) != digest:
            raise DataError(f"{directory}: checksum mismatch for {name}")
    units = [load_unit(directory / name) for name in manifest["units"]]
    bag_ids = [
        tuple(line for line in (directory / name).read_text(encoding="utf-8").splitlines() if line)
        for name in manifest.get("bags", [])
    ]
    return EnsembleSuite(
        units=tuple(units),
        plan=BagPlan(**manifest["plan"]),
        unit_seeds=tuple(manifest.get("unit_seeds", [])),
        bag_ids=tuple(bag_ids),
    )
