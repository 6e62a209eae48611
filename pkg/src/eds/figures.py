"""Figure rendering for report commands.  Headless backend, files only."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricReport
from .robustness import RobustnessReport


def save_overlap_heatmap(matrix: np.ndarray, models: Sequence[str], path: Union[str, Path]) -> Path:
    path = Path(path)
    n = len(models)
    fig, ax = plt.subplots(figsize=(1.2 * n + 2.5, 1.2 * n + 2))
    shown = np.ma.masked_invalid(matrix)
    im = ax.imshow(shown, cmap="viridis")
    ax.set_xticks(range(n), models, rotation=45, ha="right")
    ax.set_yticks(range(n), models)
    for i in range(n):
        for j in range(n):
            text = "-" if i == j else f"{matrix[i, j]:.1f}"
            ax.text(j, i, text, ha="center", va="center", color="white", fontsize=9)
    ax.set_title("Pairwise top-k overlap (%)")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_eval_chart(reports: Sequence[MetricReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    names = [r.model for r in reports]
    metrics = [
        ("ROC-AUC micro", [r.roc_auc_micro for r in reports]),
        ("ROC-AUC macro", [r.roc_auc_macro for r in reports]),
        ("PR-AUC micro", [r.pr_auc_micro for r in reports]),
        ("PR-AUC macro", [r.pr_auc_macro for r in reports]),
    ]
    ks = reports[0].ks if reports else ()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(8.0, 2.2 * len(names) + 4), 4.5))
    width = 0.8 / len(metrics)
    xs = np.arange(len(names))
    for i, (label, vals) in enumerate(metrics):
        ax1.bar(xs + i * width, vals, width, label=label)
    ax1.set_xticks(xs + 1.5 * width, names, rotation=30, ha="right")
    ax1.set_ylim(0.0, 1.05)
    ax1.set_title("AUC")
    ax1.legend(fontsize=8)
    for r in reports:
        ax2.plot(list(r.hr.keys()), list(r.hr.values()), marker="o", label=f"{r.model} HR")
        ax2.plot(list(r.mrr.keys()), list(r.mrr.values()), marker="x", linestyle="--", label=f"{r.model} MRR")
    ax2.set_xlabel("k")
    ax2.set_ylim(0.0, 1.05)
    ax2.set_title(f"HR@k and MRR@k (k in {list(ks)})")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_loo_chart(report: RobustnessReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    names = list(report.models)
    fig, axes = plt.subplots(1, 2, figsize=(max(8.0, 2.0 * len(names) + 4), 4.2), sharey=True)
    for ax, metric in zip(axes, ("micro", "macro")):
        xs = np.arange(len(names))
        means, stds, present = [], [], []
        for i, name in enumerate(names):
            ms = report.mean_std[metric].get(name)
            if ms is None:
                continue
            present.append(i)
            means.append(ms[0])
            stds.append(ms[1])
        ax.errorbar(np.asarray(present, dtype=float), means, yerr=stds, fmt="o", capsize=4)
        full_vals = [report.full[metric][n] for n in names]
        ax.scatter(xs, [v if v is not None else np.nan for v in full_vals], marker="_", s=200, color="crimson",
                   label="full pool")
        ax.set_xticks(xs, names, rotation=30, ha="right")
        ax.set_title(f"ROC-AUC {metric}: leave-one-generator-out mean and spread")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
