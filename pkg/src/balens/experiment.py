"""Seeded repeated experiments comparing balancing strategies.

Run ``r`` (0-based) uses seed ``cfg.seed + r`` for its split, bags,
resampling and unit initialisation. Within a run the down-sampling baseline
is trained on the same bag and seed as ensemble unit 1, so a one-bag
ensemble reproduces it exactly.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import ClassifierSpec, TrainConfig, predict_proba_batch, train
from .config import RunConfig, config_hash, effective_config
from .dataset import DataSplit, Dataset, SplitSpec, generate_synthetic, load_tabular, split_by_user
from .ensemble import (
    BagPlan,
    EnsembleSuite,
    PredictionBatch,
    ReferralPolicy,
    derive_seed,
    fuse_majority,
    predict_batch,
    train_suite,
    save_suite,
    write_predictions,
)
from .errors import BalensError
from .io import atomic_write, sha256_file, write_csv
from .metrics import (
    UndefinedMetricError,
    confusion_from_decisions,
    referral_by_fraction,
    referral_by_threshold,
    roc_auc,
    safe_auc,
    sensitivity,
    specificity,
    uncertainty_split,
)
from .resampling import down_sample, smote_upsample

log = logging.getLogger(__name__)

METRICS = ("auc", "sensitivity", "specificity")


@dataclass
class StrategyResult:
    strategy: str
    auc: float
    sensitivity: float
    specificity: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class RunResult:
    index: int
    seed: int
    strategies: dict[str, StrategyResult] = field(default_factory=dict)
    ensemble_batch: PredictionBatch | None = None
    suite: EnsembleSuite | None = None
    test_labels: np.ndarray | None = None
    failed: str | None = None


@dataclass
class ExperimentResult:
    config: RunConfig
    runs: list[RunResult]

    def values(self, strategy: str, metric: str) -> np.ndarray:
        return np.array([getattr(r.strategies[strategy], metric) for r in self.runs if strategy in r.strategies])

    def aggregate(self) -> list[tuple[str, str, float, float, int]]:
        """(strategy, metric, mean, population std, n runs) over successful runs."""
        names = []
        for r in self.runs:
            names.extend(s for s in r.strategies if s not in names)
        rows = []
        for s in names:
            for m in METRICS:
                v = self.values(s, m)
                v = v[np.isfinite(v)]
                if v.size:
                    rows.append((s, m, float(v.mean()), float(v.std()), int(v.size)))
                else:
                    rows.append((s, m, math.nan, math.nan, 0))
        return rows

    @property
    def failures(self) -> list[RunResult]:
        return [r for r in self.runs if r.failed]


def load_data(cfg: RunConfig) -> Dataset:
    if cfg.data.path is not None:
        return load_tabular(cfg.data.path)
    s = cfg.data.synthetic
    return generate_synthetic(s.n_pos_users, s.n_neg_users, s.samples_per_user, s.D, s.separation, s.seed, s.user_scale)


def _score(strategy: str, scores, positive, labels) -> StrategyResult:
    c = confusion_from_decisions(positive, labels)

    def guarded(fn):
        try:
            return fn(c)
        except UndefinedMetricError:
            return math.nan

    auc = safe_auc(scores, labels)
    return StrategyResult(
        strategy,
        math.nan if auc is None else auc,
        guarded(sensitivity),
        guarded(specificity),
        c.tp, c.fp, c.tn, c.fn,
    )


def run_once(cfg: RunConfig, data: Dataset, index: int, backend: str | None = None) -> RunResult:
    seed = cfg.seed + index
    split_seed = cfg.seed if cfg.split.freeze else seed
    split: DataSplit = split_by_user(
        data, SplitSpec(cfg.split.validation_user_fraction, cfg.split.test_user_fraction, split_seed)
    )
    spec = ClassifierSpec(data.feature_dim, cfg.classifier.kind, cfg.classifier.hidden_units)
    t = cfg.training
    base = TrainConfig(t.learning_rate, t.lr_decay_per_epoch, t.batch_size, t.max_epochs, t.early_stop_patience, seed)
    policy = ReferralPolicy(cfg.referral.sigma_threshold, cfg.referral.escalation)
    test = split.test
    y = test.labels.astype(np.int64)
    result = RunResult(index=index, seed=seed, test_labels=y)

    def single(train_data, unit_seed):
        unit = train(spec, replace(base, seed=unit_seed), train_data, split.validation, backend)
        return predict_proba_batch(unit, test.features)

    for strategy in cfg.strategies:
        if strategy == "ensemble":
            suite = train_suite(
                split.train, split.validation, BagPlan(cfg.n_bags, seed), spec, base,
                workers=cfg.workers, backend=backend,
            )
            batch = predict_batch(suite, test, policy)
            result.ensemble_batch = batch
            result.suite = suite
            result.strategies["ensemble"] = _score("ensemble", batch.mean_prob, batch.positive, y)
            votes = (batch.unit_probs > 0.5).mean(axis=1)
            result.strategies["ensemble_majority"] = _score(
                "ensemble_majority", votes, fuse_majority(batch.unit_probs), y
            )
            continue
        if strategy == "single_imbalanced":
            p = single(split.train, derive_seed(seed, 0))
        elif strategy == "down_sample":
            p = single(down_sample(split.train, seed), derive_seed(seed, 1))
        else:
            p = single(smote_upsample(split.train, cfg.smote_k, seed), derive_seed(seed, 0))
        result.strategies[strategy] = _score(strategy, p, p > 0.5, y)
    return result


def run_experiment(cfg: RunConfig, backend: str | None = None, data: Dataset | None = None) -> ExperimentResult:
    """Run all repeats; write reports when ``cfg.output_dir`` is set.

    A repeat that raises a :class:`BalensError` is recorded as failed and the
    remaining repeats still run.
    """
    data = data if data is not None else load_data(cfg)
    runs = []
    for r in range(cfg.n_repeats):
        try:
            runs.append(run_once(cfg, data, r, backend))
        except BalensError as exc:
            log.error("run %d failed: %s", r, exc)
            runs.append(RunResult(index=r, seed=cfg.seed + r, failed=f"{type(exc).__name__}: {exc}"))
        else:
            log.info("run %d done: %s", r, {k: round(v.auc, 4) for k, v in runs[-1].strategies.items()})
    result = ExperimentResult(cfg, runs)
    if cfg.output_dir:
        write_reports(result, Path(cfg.output_dir))
    return result


# -- reports ---------------------------------------------------------------


def _write_ensemble_run(run: RunResult, cfg: RunConfig, out: Path) -> None:
    batch, y = run.ensemble_batch, run.test_labels
    write_predictions(batch, out / "predictions.csv")
    rows = []
    for u in range(batch.unit_probs.shape[1]):
        curve = roc_auc(batch.unit_probs[:, u], y)
        rows.extend((u + 1, f, t) for f, t in curve.points())
    fused = roc_auc(batch.mean_prob, y)
    rows.extend(("fused", f, t) for f, t in fused.points())
    write_csv(out / "roc_points.csv", ["unit", "fpr", "tpr"], rows)
    write_csv(
        out / "roc_auc_units.csv",
        ["unit", "auc"],
        [(u + 1, roc_auc(batch.unit_probs[:, u], y).auc) for u in range(batch.unit_probs.shape[1])]
        + [("fused", fused.auc)],
    )
    ref = cfg.referral
    for curve, name in (
        (referral_by_threshold(batch, y, ref.thresholds), "referral_threshold.csv"),
        (referral_by_fraction(batch, y, ref.fractions), "referral_fraction.csv"),
    ):
        write_csv(
            out / name,
            [curve.kind, "auc", "n_retained", "n_positive", "n_healthy"],
            [(e.key, e.auc, e.n_retained, e.n_positive, e.n_healthy) for e in curve.entries],
        )
    h = uncertainty_split(batch, y, ref.bin_width)
    write_csv(
        out / "uncertainty_hist.csv",
        ["bin_low", "bin_high", "correct", "incorrect"],
        [(h.edges[i], h.edges[i + 1], h.correct[i], h.incorrect[i]) for i in range(len(h.correct))],
    )


def write_reports(result: ExperimentResult, out: Path) -> dict:
    cfg = result.config
    out.mkdir(parents=True, exist_ok=True)
    artifacts: list[Path] = []

    def add(p: Path):
        artifacts.append(p)

    atomic_write(out / "effective_config.json", json.dumps(effective_config(cfg), indent=1, sort_keys=True))
    add(out / "effective_config.json")

    per_run = []
    unc_rows = []
    for run in result.runs:
        run_dir = out / f"run_{run.index:02d}"
        run_dir.mkdir(exist_ok=True)
        marker = run_dir / "FAILED"
        if run.failed:
            atomic_write(marker, run.failed + "\n")
            add(marker)
            continue
        if marker.exists():
            marker.unlink()
        for s in run.strategies.values():
            per_run.append((run.index, run.seed, s.strategy, s.auc, s.sensitivity, s.specificity,
                            s.tp, s.fp, s.tn, s.fn, s.n))
        if run.ensemble_batch is not None:
            _write_ensemble_run(run, cfg, run_dir)
            artifacts.extend(sorted(run_dir.glob("*.csv")))
            save_suite(run.suite, run_dir / "suite")
            artifacts.append(run_dir / "suite" / "manifest.json")
            h = uncertainty_split(run.ensemble_batch, run.test_labels, cfg.referral.bin_width)
            thr = referral_by_threshold(run.ensemble_batch, run.test_labels, cfg.referral.thresholds)
            best = thr.best()
            unc_rows.append((run.index, h.mean_correct, h.mean_incorrect, h.n_correct, h.n_incorrect,
                             thr.full_auc, best.key if best else None, best.auc if best else None))
    write_csv(out / "metrics_per_run.csv",
              ["run", "seed", "strategy", "auc", "sensitivity", "specificity", "tp", "fp", "tn", "fn", "n_test"],
              per_run)
    write_csv(out / "metrics_aggregate.csv", ["strategy", "metric", "mean", "std", "n_runs"], result.aggregate())
    add(out / "metrics_per_run.csv")
    add(out / "metrics_aggregate.csv")
    if unc_rows:
        write_csv(out / "uncertainty_per_run.csv",
                  ["run", "mean_sigma_correct", "mean_sigma_incorrect", "n_correct", "n_incorrect",
                   "full_auc", "best_threshold", "best_threshold_auc"], unc_rows)
        add(out / "uncertainty_per_run.csv")

    if cfg.plots:
        from .plots import plot_experiment

        artifacts.extend(plot_experiment(result, out))

    inputs = {}
    if cfg.data.path:
        inputs[cfg.data.path] = sha256_file(cfg.data.path)
    manifest = {
        "config_hash": config_hash(cfg),
        "inputs": inputs,
        "artifacts": {str(p.relative_to(out)): sha256_file(p) for p in artifacts},
        "failed_runs": [r.index for r in result.failures],
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
