"""Screening metrics and uncertainty-referral analyses.

AUC is the Mann-Whitney statistic (ties count one half), so it is exact and
does not depend on a threshold grid. Referral curves report ``None`` for any
entry whose retained set lacks one of the classes instead of inventing a
value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import round_half_up
from .ensemble import POSITIVE_LABEL, PredictionBatch


class UndefinedMetricError(ValueError):
    pass


def _as_arrays(preds):
    """(mean_prob, uncertainty, positive decision, ids) from a batch or a list of Prediction."""
    if isinstance(preds, PredictionBatch):
        ids = preds.ids if preds.ids is not None else np.arange(len(preds))
        return preds.mean_prob, preds.uncertainty, np.asarray(preds.positive, dtype=bool), np.asarray(ids)
    preds = list(preds)
    mu = np.array([p.mean_prob for p in preds], dtype=np.float64)
    sigma = np.array([p.uncertainty for p in preds], dtype=np.float64)
    pos = np.array([p.decision == POSITIVE_LABEL for p in preds], dtype=bool)
    ids = [p.id for p in preds]
    ids = np.arange(len(preds)) if any(i is None for i in ids) else np.array(ids, dtype=object)
    return mu, sigma, pos, ids


def _labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels).astype(np.int64)
    if y.shape != (n,):
        raise ValueError(f"{n} predictions but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y


# -- confusion-based metrics ------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_from_decisions(positive, labels) -> ConfusionCounts:
    positive = np.asarray(positive, dtype=bool)
    y = _labels(labels, positive.size).astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(positive & y)),
        fp=int(np.sum(positive & ~y)),
        tn=int(np.sum(~positive & ~y)),
        fn=int(np.sum(~positive & y)),
    )


def confusion(preds, labels) -> ConfusionCounts:
    _, _, positive, _ = _as_arrays(preds)
    return confusion_from_decisions(positive, labels)


def sensitivity(c: ConfusionCounts) -> float:
    """TP / (TP + FN)."""
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("sensitivity undefined: no positive samples")
    return c.tp / (c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    """TN / (TN + FP)."""
    if c.tn + c.fp == 0:
        raise UndefinedMetricError("specificity undefined: no healthy samples")
    return c.tn / (c.tn + c.fp)


# -- ROC ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def mann_whitney_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(score_pos == score_neg), via average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = _labels(labels, s.size)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined: need at least one positive and one negative sample")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    _, first, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    # 1-based average rank of each tie group
    group_rank = first + (counts + 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(group_rank, counts)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc(scores, labels) -> RocCurve:
    s = np.asarray(scores, dtype=np.float64)
    y = _labels(labels, s.size)
    auc = mann_whitney_auc(s, y)
    order = np.argsort(-s, kind="mergesort")
    s_desc = s[order]
    y_desc = y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s_desc[1:] != s_desc[:-1], True])
    tps = np.cumsum(y_desc)[ends]
    fps = (ends + 1) - tps
    n_pos = y.sum()
    n_neg = y.size - n_pos
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s_desc[ends]]
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


def safe_auc(scores, labels) -> float | None:
    try:
        return mann_whitney_auc(scores, labels)
    except UndefinedMetricError:
        return None


# -- uncertainty analyses ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class UncertaintyHistograms:
    edges: np.ndarray
    correct: np.ndarray
    incorrect: np.ndarray
    n_correct: int
    n_incorrect: int
    mean_correct: float
    mean_incorrect: float


def uncertainty_split(preds, labels, bin_width: float = 0.05) -> UncertaintyHistograms:
    """Normalized histograms of uncertainty over [0, 0.5] for correct and incorrect decisions."""
    _, sigma, positive, _ = _as_arrays(preds)
    if sigma.size == 0:
        raise ValueError("no predictions")
    y = _labels(labels, sigma.size).astype(bool)
    n_bins = round_half_up(0.5 / bin_width)
    if n_bins < 1 or not math.isclose(n_bins * bin_width, 0.5, rel_tol=1e-9):
        raise ValueError("bin_width must divide 0.5")
    edges = np.linspace(0.0, 0.5, n_bins + 1)
    correct = positive == y

    def hist(values):
        counts, _ = np.histogram(values, bins=edges)
        return counts / values.size if values.size else counts.astype(np.float64)

    def mean(values):
        return float(values.mean()) if values.size else math.nan

    return UncertaintyHistograms(
        edges=edges,
        correct=hist(sigma[correct]),
        incorrect=hist(sigma[~correct]),
        n_correct=int(correct.sum()),
        n_incorrect=int((~correct).sum()),
        mean_correct=mean(sigma[correct]),
        mean_incorrect=mean(sigma[~correct]),
    )


@dataclass(frozen=True)
class ReferralEntry:
    key: float
    auc: float | None
    n_retained: int
    n_positive: int
    n_healthy: int

    @property
    def defined(self) -> bool:
        return self.auc is not None


@dataclass(frozen=True)
class ReferralCurve:
    kind: str  # "threshold" or "fraction"
    full_auc: float | None
    entries: tuple[ReferralEntry, ...]

    def best(self) -> ReferralEntry | None:
        defined = [e for e in self.entries if e.defined]
        return max(defined, key=lambda e: e.auc) if defined else None


DEFAULT_THRESHOLDS = tuple(round(0.01 * i, 2) for i in range(51))
DEFAULT_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(1, 21))


def _entry(key, mu, y, keep) -> ReferralEntry:
    yk = y[keep]
    n_pos = int(yk.sum())
    return ReferralEntry(
        key=float(key),
        auc=safe_auc(mu[keep], yk),
        n_retained=int(yk.size),
        n_positive=n_pos,
        n_healthy=int(yk.size - n_pos),
    )


def referral_by_threshold(preds, labels, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> ReferralCurve:
    """AUC of the fused score over samples whose uncertainty is strictly below each threshold."""
    mu, sigma, _, _ = _as_arrays(preds)
    y = _labels(labels, mu.size)
    th = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(th) < 0):
        raise ValueError("thresholds must be sorted ascending")
    entries = tuple(_entry(t, mu, y, sigma < t) for t in th)
    return ReferralCurve("threshold", safe_auc(mu, y), entries)


def referral_by_fraction(preds, labels, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> ReferralCurve:
    """AUC over the ``round(f * n)`` least uncertain samples; ties broken by sample id."""
    mu, sigma, _, ids = _as_arrays(preds)
    y = _labels(labels, mu.size)
    fr = np.asarray(fractions, dtype=np.float64)
    if np.any((fr <= 0) | (fr > 1)):
        raise ValueError("fractions must lie in (0, 1]")
    order = np.lexsort((np.asarray([str(i) for i in ids]), sigma))
    entries = []
    for f in fr:
        keep = order[: round_half_up(f * mu.size)]
        entries.append(_entry(f, mu, y, keep))
    return ReferralCurve("fraction", safe_auc(mu, y), tuple(entries))
