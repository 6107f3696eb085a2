"""Run configuration: a JSON document validated into nested dataclasses.

Unknown keys are rejected at every level; missing keys take the defaults
below. :func:`effective_config` returns the fully resolved document that is
written next to every run's outputs.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

STRATEGIES = ("single_imbalanced", "down_sample", "smote", "ensemble")


@dataclass(frozen=True)
class SyntheticData:
    n_pos_users: int = 260
    n_neg_users: int = 1000
    samples_per_user: tuple[int, int] = (1, 2)
    D: int = 16
    separation: float = 1.25
    seed: int = 7
    user_scale: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "samples_per_user", tuple(self.samples_per_user))
        lo, hi = self.samples_per_user
        if self.n_pos_users < 1 or self.n_neg_users < 1 or self.D < 1 or lo < 1 or hi < lo:
            raise ConfigError("synthetic: counts must be positive and samples_per_user a valid [min, max]")
        if self.separation < 0 or self.user_scale < 0:
            raise ConfigError("synthetic: separation and user_scale must be >= 0")


@dataclass(frozen=True)
class DataSource:
    path: str | None = None
    synthetic: SyntheticData | None = None

    def __post_init__(self):
        if (self.path is None) == (self.synthetic is None):
            raise ConfigError("data: give exactly one of 'path' or 'synthetic'")


@dataclass(frozen=True)
class SplitConfig:
    validation_user_fraction: float = 0.10
    test_user_fraction: float = 0.20
    freeze: bool = False

    def __post_init__(self):
        v, t = self.validation_user_fraction, self.test_user_fraction
        if not (0 < v < 1 and 0 < t < 1 and v + t < 1):
            raise ConfigError("split: fractions must lie in (0, 1) and sum to < 1")


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "mlp_head"
    hidden_units: int = 64

    def __post_init__(self):
        if self.kind not in ("mlp_head", "logistic"):
            raise ConfigError(f"classifier.kind must be mlp_head or logistic, got {self.kind!r}")
        if self.hidden_units < 1:
            raise ConfigError("classifier.hidden_units must be >= 1")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-4
    lr_decay_per_epoch: float = 0.99
    batch_size: int = 1
    max_epochs: int = 100
    early_stop_patience: int = 5

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("training.learning_rate must be >= 0")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ConfigError("training.lr_decay_per_epoch must lie in (0, 1]")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ConfigError("training: batch_size, max_epochs and early_stop_patience must be >= 1")


@dataclass(frozen=True)
class ReferralConfig:
    sigma_threshold: float = 0.2
    escalation: tuple[str, ...] = ("repeat-audio-test", "clinical-test")
    thresholds: tuple[float, ...] = tuple(round(0.01 * i, 2) for i in range(51))
    fractions: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 21))
    bin_width: float = 0.05

    def __post_init__(self):
        for name in ("escalation", "thresholds", "fractions"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.sigma_threshold < 0:
            raise ConfigError("referral.sigma_threshold must be >= 0")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ConfigError("referral.thresholds must be ascending")
        if any(not 0 < f <= 1 for f in self.fractions):
            raise ConfigError("referral.fractions must lie in (0, 1]")
        if not 0 < self.bin_width <= 0.5:
            raise ConfigError("referral.bin_width must lie in (0, 0.5]")


@dataclass(frozen=True)
class RunConfig:
    data: DataSource
    output_dir: str | None = None
    strategies: tuple[str, ...] = ("ensemble",)
    n_repeats: int = 10
    seed: int = 0
    n_bags: int = 10
    smote_k: int = 5
    workers: int = 1
    plots: bool = False
    split: SplitConfig = field(default_factory=SplitConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    referral: ReferralConfig = field(default_factory=ReferralConfig)

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        if not self.strategies:
            raise ConfigError("strategies must be non-empty")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"unknown strategies {bad}; choose from {list(STRATEGIES)}")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("strategies must not repeat")
        if self.n_repeats < 1:
            raise ConfigError("n_repeats must be >= 1")
        if self.n_bags < 1:
            raise ConfigError("n_bags must be >= 1")
        if self.smote_k < 1:
            raise ConfigError("smote_k must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


_NESTED = {
    "data": DataSource,
    "synthetic": SyntheticData,
    "split": SplitConfig,
    "classifier": ClassifierConfig,
    "training": TrainingConfig,
    "referral": ReferralConfig,
}


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if key in _NESTED and value is not None:
            value = _build(_NESTED[key], value, f"{where}.{key}" if where else key)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def config_from_dict(doc: dict) -> RunConfig:
    if "data" not in doc:
        raise ConfigError("config: 'data' is required")
    return _build(RunConfig, doc, "")


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)


def effective_config(cfg: RunConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg)))


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical effective config, excluding settings that cannot change results."""
    doc = effective_config(cfg)
    for key in ("output_dir", "workers", "plots"):
        doc.pop(key, None)
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
