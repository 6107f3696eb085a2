"""Command-line entry point: ``balens <subcommand>``.

Exit codes: 0 success, 1 unexpected error, 2 configuration error, 3 data
error (including failed audio clips), 4 training divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import BalensError, ConfigError, DataError, TrainingDivergedError

log = logging.getLogger("balens")


def _set(doc: dict, dotted: str, value) -> None:
    if value is None:
        return
    *parents, leaf = dotted.split(".")
    for p in parents:
        doc = doc.setdefault(p, {})
    doc[leaf] = value


def cmd_synth(args) -> int:
    from .dataset import generate_synthetic, write_tabular

    data = generate_synthetic(
        args.pos_users, args.neg_users, (args.min_samples, args.max_samples),
        args.dim, args.separation, args.seed, args.user_scale,
    )
    write_tabular(data, args.out)
    log.info("wrote %d samples (%d positive) to %s", len(data), int(data.labels.sum()), args.out)
    return 0


def cmd_preprocess(args) -> int:
    from .audio import read_manifest, submission_features
    from .dataset import Dataset, write_tabular
    from .io import write_csv

    rows = read_manifest(args.manifest)
    ok_ids, ok_users, ok_labels, feats, status = [], [], [], [], []
    for row in rows:
        try:
            f = submission_features(row)
        except DataError as exc:
            log.error("%s: %s", row.id, exc)
            status.append((row.id, "failed", str(exc).replace(",", ";")))
            continue
        ok_ids.append(row.id)
        ok_users.append(row.user_id)
        ok_labels.append(row.label)
        feats.append(f)
        status.append((row.id, "ok", ""))
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log.csv")
    write_csv(log_path, ["id", "status", "message"], status)
    if feats:
        write_tabular(Dataset(ok_ids, ok_users, np.vstack(feats), ok_labels), args.out)
    n_failed = sum(1 for s in status if s[1] == "failed")
    log.info("%d clips ok, %d failed (log: %s)", len(feats), n_failed, log_path)
    return DataError.exit_code if n_failed else 0


def build_run_config(args):
    from .config import config_from_dict

    doc: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    if args.data:
        doc["data"] = {"path": args.data}
    doc.setdefault("data", {"synthetic": {}})
    _set(doc, "output_dir", args.out)
    _set(doc, "strategies", args.strategy)
    _set(doc, "n_repeats", args.repeats)
    _set(doc, "n_bags", args.bags)
    _set(doc, "seed", args.seed)
    _set(doc, "workers", args.workers)
    _set(doc, "plots", True if args.plots else None)
    _set(doc, "classifier.kind", args.classifier)
    _set(doc, "training.max_epochs", args.max_epochs)
    _set(doc, "training.early_stop_patience", args.patience)
    _set(doc, "training.learning_rate", args.lr)
    _set(doc, "split.freeze", True if args.freeze_split else None)
    _set(doc, "referral.sigma_threshold", args.sigma_threshold)
    return config_from_dict(doc)


def cmd_experiment(args) -> int:
    from .experiment import run_experiment

    cfg = build_run_config(args)
    if not cfg.output_dir:
        raise ConfigError("experiment needs an output directory (--out or output_dir in the config)")
    result = run_experiment(cfg)
    for strategy, metric, mean, std, n in result.aggregate():
        print(f"{strategy:18s} {metric:12s} {mean:.2f}({std:.2f})  n={n}")
    if result.failures:
        codes = {TrainingDivergedError.__name__: TrainingDivergedError.exit_code}
        return max(codes.get(r.failed.split(":")[0], 1) for r in result.failures)
    return 0


def cmd_predict(args) -> int:
    from .dataset import load_tabular
    from .ensemble import ReferralPolicy, load_suite, predict_batch, write_predictions

    suite = load_suite(args.suite)
    data = load_tabular(args.data)
    batch = predict_batch(suite, data, ReferralPolicy(args.sigma_threshold))
    write_predictions(batch, args.out)
    log.info("wrote %d predictions (%d referred) to %s", len(batch), int(batch.referred.sum()), args.out)
    return 0


def cmd_referral_sweep(args) -> int:
    from .dataset import load_tabular
    from .ensemble import ReferralPolicy, load_suite, predict_batch
    from .io import write_csv
    from .metrics import referral_by_fraction, referral_by_threshold, uncertainty_split

    suite = load_suite(args.suite)
    data = load_tabular(args.data)
    batch = predict_batch(suite, data, ReferralPolicy())
    y = data.labels
    out = Path(args.out)
    kwargs_t = {"thresholds": args.thresholds} if args.thresholds else {}
    kwargs_f = {"fractions": args.fractions} if args.fractions else {}
    for curve in (referral_by_threshold(batch, y, **kwargs_t), referral_by_fraction(batch, y, **kwargs_f)):
        write_csv(
            out / f"referral_{curve.kind}.csv",
            [curve.kind, "auc", "n_retained", "n_positive", "n_healthy"],
            [(e.key, e.auc, e.n_retained, e.n_positive, e.n_healthy) for e in curve.entries],
        )
        best = curve.best()
        if best is not None:
            print(f"{curve.kind}: full AUC {curve.full_auc:.3f}, best {best.auc:.3f} at {best.key:g} "
                  f"({best.n_retained} retained)")
    h = uncertainty_split(batch, y)
    write_csv(out / "uncertainty_hist.csv", ["bin_low", "bin_high", "correct", "incorrect"],
              [(h.edges[i], h.edges[i + 1], h.correct[i], h.incorrect[i]) for i in range(len(h.correct))])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="balens", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic feature table")
    s.add_argument("--out", required=True)
    s.add_argument("--pos-users", type=int, default=260)
    s.add_argument("--neg-users", type=int, default=1000)
    s.add_argument("--min-samples", type=int, default=1)
    s.add_argument("--max-samples", type=int, default=2)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--separation", type=float, default=1.25)
    s.add_argument("--user-scale", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=7)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="turn an audio manifest into a 384-dim feature table")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="per-clip status CSV (default: <out>.log.csv)")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("experiment", help="repeated seeded train/evaluate runs")
    s.add_argument("--config")
    s.add_argument("--data", help="feature table (default: synthetic data from the config)")
    s.add_argument("--out")
    s.add_argument("--strategy", action="append",
                   choices=["single_imbalanced", "down_sample", "smote", "ensemble"])
    s.add_argument("--repeats", type=int)
    s.add_argument("--bags", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--classifier", choices=["mlp_head", "logistic"])
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--sigma-threshold", type=float)
    s.add_argument("--freeze-split", action="store_true")
    s.add_argument("--plots", action="store_true")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("predict", help="score a feature table with a saved suite")
    s.add_argument("--suite", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sigma-threshold", type=float, default=0.2)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("referral-sweep", help="AUC versus uncertainty threshold and retained fraction")
    s.add_argument("--suite", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--thresholds", type=float, nargs="+")
    s.add_argument("--fractions", type=float, nargs="+")
    s.set_defaults(func=cmd_referral_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except BalensError as exc:
        print(f"balens: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
