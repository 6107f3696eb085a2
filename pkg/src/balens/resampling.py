"""Balanced training sets: ensemble bags, down-sampling and SMOTE up-sampling."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import HEALTHY, POSITIVE, Dataset
from .errors import ConfigError, DataError

SMOTE_USER = "__smote__"


@dataclass(frozen=True)
class BagPlan:
    n_bags: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_bags < 1:
            raise ConfigError("n_bags must be >= 1")


@dataclass(frozen=True)
class TrainingBag:
    index: int
    data: Dataset
    healthy_users: tuple[str, ...]

    @property
    def positive_users(self) -> list[str]:
        return self.data.users(POSITIVE)


def _check_balanceable(train: Dataset) -> tuple[list[str], list[str]]:
    pos = train.users(POSITIVE)
    neg = train.users(HEALTHY)
    if not pos:
        raise DataError("training data has no positive users")
    if len(neg) < len(pos):
        raise DataError(f"fewer healthy users ({len(neg)}) than positive users ({len(pos)})")
    return pos, neg


def make_bags(train: Dataset, plan: BagPlan) -> list[TrainingBag]:
    """Draw ``plan.n_bags`` user-balanced bags.

    Every bag holds all positive users plus as many healthy users, drawn
    without replacement inside a bag and independently across bags.
    """
    pos, neg = _check_balanceable(train)
    rng = np.random.default_rng(plan.seed)
    bags = []
    for i in range(plan.n_bags):
        chosen = sorted(neg[j] for j in rng.choice(len(neg), size=len(pos), replace=False))
        bags.append(TrainingBag(i + 1, train.select_users(pos + chosen), tuple(chosen)))
    return bags


def down_sample(train: Dataset, seed: int) -> Dataset:
    """Single balanced dataset; identical to the one-bag plan with the same seed."""
    return make_bags(train, BagPlan(1, seed))[0].data


def smote_upsample(train: Dataset, k: int = 5, seed: int = 0) -> Dataset:
    """Add synthetic positive samples until the two classes have equal sample counts.

    Each synthetic vector is ``s + u * (nn - s)`` for a random positive sample
    ``s``, one of its ``k`` nearest positive neighbours ``nn`` (Euclidean,
    brute force, ties by row order) and ``u ~ U[0, 1]``.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    pos_idx = np.flatnonzero(train.labels == POSITIVE)
    n_pos = pos_idx.size
    n_neg = len(train) - n_pos
    if n_pos < k + 1:
        raise DataError(f"SMOTE with k={k} needs at least {k + 1} positive samples, got {n_pos}")
    n_new = n_neg - n_pos
    if n_new <= 0:
        return train

    P = train.features[pos_idx]
    dist = cdist(P, P, "sqeuclidean")
    np.fill_diagonal(dist, np.inf)
    neighbours = np.argsort(dist, axis=1, kind="stable")[:, :k]

    rng = np.random.default_rng(seed)
    parent = rng.integers(0, n_pos, size=n_new)
    nn = neighbours[parent, rng.integers(0, k, size=n_new)]
    u = rng.random(n_new)[:, None]
    synth = P[parent] + u * (P[nn] - P[parent])

    taken = set(train.ids.tolist())
    new_ids = []
    j = 0
    while len(new_ids) < n_new:
        cand = f"smote-{j:06d}"
        if cand not in taken:
            new_ids.append(cand)
        j += 1
    extra = Dataset(new_ids, [SMOTE_USER] * n_new, synth, np.ones(n_new, dtype=np.int8))
    return Dataset.concat([train, extra])


def write_bag_manifests(bags: list[TrainingBag], directory: str | os.PathLike) -> list[Path]:
    """One id list per bag, ``bag_XX.txt``, for auditing."""
    from .io import atomic_write

    directory = Path(directory)
    paths = []
    for bag in bags:
        p = directory / f"bag_{bag.index:02d}.txt"
        atomic_write(p, "\n".join(str(i) for i in bag.data.ids) + "\n")
        paths.append(p)
    return paths
