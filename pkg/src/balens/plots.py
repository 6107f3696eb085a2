"""Optional SVG figures for an experiment (needs matplotlib)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .metrics import referral_by_fraction, referral_by_threshold, roc_auc, uncertainty_split


def plot_experiment(result, out: Path) -> list[Path]:
    """ROC overlay and referral panels for the first successful ensemble run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "balens"
    matplotlib.rcParams["svg.fonttype"] = "none"
    runs = [r for r in result.runs if r.ensemble_batch is not None]
    if not runs:
        return []
    run = runs[0]
    batch, y = run.ensemble_batch, run.test_labels
    ref = result.config.referral
    paths = []

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for u in range(batch.unit_probs.shape[1]):
        c = roc_auc(batch.unit_probs[:, u], y)
        ax.plot(c.fpr, c.tpr, lw=0.8, alpha=0.6)
    c = roc_auc(batch.mean_prob, y)
    ax.plot(c.fpr, c.tpr, color="black", lw=2.5, label=f"fused (AUC {c.auc:.2f})")
    ax.plot([0, 1], [0, 1], ls=":", color="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right")
    p = out / "roc_units.svg"
    fig.savefig(p, metadata={"Date": None})
    plt.close(fig)
    paths.append(p)

    h = uncertainty_split(batch, y, ref.bin_width)
    thr = referral_by_threshold(batch, y, ref.thresholds)
    frac = referral_by_fraction(batch, y, ref.fractions)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    width = h.edges[1] - h.edges[0]
    axes[0].bar(h.edges[:-1], h.correct, width=width, align="edge", alpha=0.6, label="correct")
    axes[0].bar(h.edges[:-1], h.incorrect, width=width, align="edge", alpha=0.6, label="incorrect")
    axes[0].set_xlabel("uncertainty")
    axes[0].legend()
    for ax, curve, xlabel in ((axes[1], thr, "uncertainty threshold"), (axes[2], frac, "retained fraction")):
        x = np.array([e.key for e in curve.entries])
        a = np.array([np.nan if e.auc is None else e.auc for e in curve.entries])
        ax.plot(x, a, marker=".")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("AUC")
    p = out / "referral.svg"
    fig.tight_layout()
    fig.savefig(p, metadata={"Date": None})
    plt.close(fig)
    paths.append(p)
    return paths
