"""Labelled feature datasets, tabular I/O, user-disjoint splitting and a
synthetic generator.

A :class:`Dataset` keeps its samples column-wise (ids, user ids, a feature
matrix and a label vector) so downstream training can hand the arrays to the
numerical kernels without copying. Users, not samples, are the unit of every
split and every resampling step.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

POSITIVE = 1
HEALTHY = 0


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Sample:
    id: str
    user_id: str
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable ordered collection of samples with a fixed feature dimension."""

    ids: np.ndarray
    user_ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    _user_label: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=object)
        users = np.asarray(self.user_ids, dtype=object)
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        n = X.shape[0]
        if not (len(ids) == len(users) == len(y) == n):
            raise DataError("ids, user_ids, features and labels differ in length")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite feature value")
        if n and not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        if len(set(ids.tolist())) != n:
            raise DataError("duplicate sample ids")
        user_label: dict[str, int] = {}
        for u, lab in zip(users.tolist(), y.tolist()):
            prev = user_label.setdefault(u, int(lab))
            if prev != lab:
                raise DataError(f"conflicting labels for user {u!r}")
        object.__setattr__(self, "ids", _frozen(ids.copy()))
        object.__setattr__(self, "user_ids", _frozen(users.copy()))
        object.__setattr__(self, "features", _frozen(X.copy() if X is self.features else X))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int8)))
        object.__setattr__(self, "_user_label", user_label)

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(str(self.ids[i]), str(self.user_ids[i]), self.features[i], int(self.labels[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def users(self, label: int | None = None) -> list[str]:
        """Sorted user ids, optionally restricted to one class."""
        return sorted(u for u, lab in self._user_label.items() if label is None or lab == label)

    def user_label(self, user_id: str) -> int:
        return self._user_label[user_id]

    def subset(self, index: Sequence[int] | np.ndarray) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.ids[index], self.user_ids[index], self.features[index], self.labels[index])

    def select_users(self, users: Iterable[str]) -> "Dataset":
        """Samples belonging to ``users``, in dataset row order."""
        wanted = set(users)
        mask = np.fromiter((u in wanted for u in self.user_ids), dtype=bool, count=len(self))
        return self.subset(np.flatnonzero(mask))

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise DataError("empty dataset")
        return cls(
            [s.id for s in samples],
            [s.user_id for s in samples],
            np.vstack([np.asarray(s.features, dtype=np.float64) for s in samples]),
            [s.label for s in samples],
        )

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        return Dataset(
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.user_ids for p in parts]),
            np.vstack([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
        )


# -- tabular I/O -----------------------------------------------------------


@dataclass(frozen=True)
class TabularSchema:
    id_column: str = "id"
    user_column: str = "user_id"
    label_column: str = "label"
    feature_prefix: str = "f"


def load_tabular(path: str | os.PathLike, schema: TabularSchema | None = None) -> Dataset:
    """Read a comma-delimited feature table.

    Feature columns are those whose name is ``feature_prefix`` followed by an
    integer; they are ordered by that integer.
    """
    schema = schema or TabularSchema()
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty dataset") from None
        cols = {name: i for i, name in enumerate(header)}
        for req in (schema.id_column, schema.user_column, schema.label_column):
            if req not in cols:
                raise DataError(f"{path}: header lacks column {req!r}")
        pre = schema.feature_prefix
        feat_cols = sorted(
            (int(name[len(pre):]), i)
            for name, i in cols.items()
            if name.startswith(pre) and name[len(pre):].isdigit()
        )
        if not feat_cols:
            raise DataError(f"{path}: no feature columns with prefix {pre!r}")
        if [k for k, _ in feat_cols] != list(range(len(feat_cols))):
            raise DataError(f"{path}: feature columns are not {pre}0..{pre}{len(feat_cols) - 1}")
        fidx = [i for _, i in feat_cols]
        i_id, i_user, i_label = cols[schema.id_column], cols[schema.user_column], cols[schema.label_column]

        ids, users, labels, rows = [], [], [], []
        user_label: dict[str, tuple[int, int]] = {}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{line}: inconsistent feature dimension "
                    f"({len(row)} fields, header has {len(header)})"
                )
            try:
                label = int(row[i_label])
                feats = [float(row[i]) for i in fidx]
            except ValueError as exc:
                raise DataError(f"{path}:{line}: malformed row ({exc})") from None
            if label not in (0, 1):
                raise DataError(f"{path}:{line}: label must be 0 or 1, got {label}")
            if not all(math.isfinite(v) for v in feats):
                raise DataError(f"{path}:{line}: non-finite feature value")
            user = row[i_user]
            first = user_label.setdefault(user, (label, line))
            if first[0] != label:
                raise DataError(
                    f"{path}:{line}: conflicting labels for user {user!r} (line {first[1]} has {first[0]})"
                )
            ids.append(row[i_id])
            users.append(user)
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise DataError(f"{path}: empty dataset")
    return Dataset(ids, users, np.array(rows, dtype=np.float64), labels)


def format_float(x: float) -> str:
    # repr round-trips float64 exactly
    return repr(float(x))


def write_tabular(data: Dataset, path: str | os.PathLike) -> None:
    from .io import atomic_write

    D = data.feature_dim
    lines = [",".join(["id", "user_id", "label"] + [f"f{j}" for j in range(D)])]
    for i in range(len(data)):
        fields = [str(data.ids[i]), str(data.user_ids[i]), str(int(data.labels[i]))]
        fields.extend(format_float(v) for v in data.features[i])
        lines.append(",".join(fields))
    atomic_write(path, "\n".join(lines) + "\n")


# -- splitting -------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    validation_user_fraction: float = 0.10
    test_user_fraction: float = 0.20
    seed: int = 0

    def __post_init__(self):
        v, t = self.validation_user_fraction, self.test_user_fraction
        if not (0 < v < 1 and 0 < t < 1):
            raise DataError("split fractions must lie in (0, 1)")
        if v + t >= 1:
            raise DataError("validation + test fractions must be < 1")


@dataclass(frozen=True)
class DataSplit:
    train: Dataset
    validation: Dataset
    test: Dataset


def split_by_user(data: Dataset, spec: SplitSpec) -> DataSplit:
    """User-disjoint train/validation/test split.

    Validation and test take ``round(fraction * n_positive_users)`` positive
    users each, matched by the same number of healthy users drawn without
    replacement. Everything else is training data.
    """
    pos = data.users(POSITIVE)
    neg = data.users(HEALTHY)
    n_val = round_half_up(spec.validation_user_fraction * len(pos))
    n_test = round_half_up(spec.test_user_fraction * len(pos))
    if n_val < 1 or n_test < 1 or len(pos) - n_val - n_test < 1:
        raise DataError(
            f"insufficient positive users ({len(pos)}) for validation={n_val}, test={n_test} "
            "with at least one left for training"
        )
    if len(neg) < n_val + n_test:
        raise DataError(f"insufficient healthy users ({len(neg)}) to match {n_val + n_test} held-out positives")

    rng = np.random.default_rng(spec.seed)
    pos_perm = [pos[i] for i in rng.permutation(len(pos))]
    neg_perm = [neg[i] for i in rng.permutation(len(neg))]
    val_users = pos_perm[:n_val] + neg_perm[:n_val]
    test_users = pos_perm[n_val:n_val + n_test] + neg_perm[n_val:n_val + n_test]
    train_users = pos_perm[n_val + n_test:] + neg_perm[n_val + n_test:]
    return DataSplit(
        train=data.select_users(train_users),
        validation=data.select_users(val_users),
        test=data.select_users(test_users),
    )


# -- synthetic data --------------------------------------------------------


def generate_synthetic(
    n_pos_users: int,
    n_neg_users: int,
    samples_per_user: tuple[int, int] = (1, 3),
    D: int = 16,
    separation: float = 1.5,
    seed: int = 0,
    user_scale: float = 0.5,
) -> Dataset:
    """Two unit-covariance Gaussian classes separated along the all-ones direction.

    Each user draws an offset ``N(0, user_scale^2 I)`` shared by all of that
    user's samples; sample counts per user are uniform on the inclusive range
    ``samples_per_user``. Users are interleaved in a seeded random order.
    """
    lo, hi = samples_per_user
    if n_pos_users < 1 or n_neg_users < 1 or lo < 1 or hi < lo or D < 1:
        raise DataError("synthetic generator needs positive counts and 1 <= min samples <= max samples")
    if separation < 0 or user_scale < 0:
        raise DataError("separation and user_scale must be non-negative")
    rng = np.random.default_rng(seed)
    direction = np.full(D, 1.0 / math.sqrt(D))
    n_users = n_pos_users + n_neg_users
    user_labels = np.array([1] * n_pos_users + [0] * n_neg_users, dtype=np.int8)[rng.permutation(n_users)]
    counts = rng.integers(lo, hi + 1, size=n_users)
    offsets = user_scale * rng.standard_normal((n_users, D))

    owner = np.repeat(np.arange(n_users), counts)
    noise = rng.standard_normal((owner.size, D))
    labels = user_labels[owner]
    X = noise + offsets[owner] + separation * labels[:, None] * direction[None, :]
    ids = [f"s{i:06d}" for i in range(owner.size)]
    users = [f"u{u:05d}" for u in owner]
    return Dataset(ids, users, X, labels)
