"""Evaluation artifacts: delimited curve series plus rendered figures.

The statistics modules stay pure; this module turns their outputs into CSV
files and matplotlib PNGs living next to each other in the report
directory."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .data import CLASS_NAMES, HYPER, HYPO
from .evaluation import (
    MetricsReport,
    ScoredExample,
    TimeBucketRow,
    _scores_truths,
    fp_severity_curve,
    pr_curve_points,
    relative_risk_curve,
    roc_curve_points,
    time_bucket_report,
)

HYPO_FRACTIONS = [round(0.01 * k, 2) for k in range(1, 11)]  # up to 0.10
HYPER_FRACTIONS = [round(0.02 * k, 2) for k in range(1, 16)]  # up to 0.30


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if isinstance(v, float) and math.isnan(v) else v for v in row])


def report_to_csv(path: Path, report: MetricsReport, label: str) -> None:
    rows = []
    for name, m in report.per_class.items():
        rows.append(
            [
                label, name, m.prevalence, m.auroc, m.auprc,
                m.auroc_ci[0] if m.auroc_ci else math.nan,
                m.auroc_ci[1] if m.auroc_ci else math.nan,
                m.auprc_ci[0] if m.auprc_ci else math.nan,
                m.auprc_ci[1] if m.auprc_ci else math.nan,
                m.cutpoint, m.ppv, m.npv, m.sensitivity, m.specificity,
            ]
        )
    rows.append(
        [
            label, "macro", math.nan, report.macro["auroc"], report.macro["auprc"],
            math.nan, math.nan, math.nan, math.nan, math.nan,
            report.macro["ppv"], report.macro["npv"],
            report.macro["sensitivity"], report.macro["specificity"],
        ]
    )
    _write_csv(
        path,
        [
            "model", "class", "prevalence", "auroc", "auprc",
            "auroc_ci_low", "auroc_ci_high", "auprc_ci_low", "auprc_ci_high",
            "cutpoint", "ppv", "npv", "sensitivity", "specificity",
        ],
        rows,
    )


def time_buckets_to_csv(path: Path, rows: list[TimeBucketRow]) -> None:
    out = []
    for row in rows:
        for c, name in enumerate(CLASS_NAMES):
            out.append(
                [
                    row.bucket, row.low_minutes, row.high_minutes, row.n_examples,
                    name, row.auroc_per_class[c], row.auprc_per_class[c],
                ]
            )
    _write_csv(
        path,
        ["bucket", "low_minutes", "high_minutes", "n_examples", "class", "auroc", "auprc"],
        out,
    )


def render_evaluation(
    out_dir: Path, scored: list[ScoredExample], report: MetricsReport
) -> list[Path]:
    """Write curve CSVs and figures; returns every path written."""
    out_dir = Path(out_dir)
    curves = out_dir / "curves"
    figures = out_dir / "figures"
    curves.mkdir(parents=True, exist_ok=True)
    figures.mkdir(parents=True, exist_ok=True)
    written = []

    # ROC / PR panels per class
    fig, axes = plt.subplots(2, 3, figsize=(13, 7.5))
    for c, name in enumerate(CLASS_NAMES):
        scores, truths = _scores_truths(scored, c)
        roc = roc_curve_points(scores, truths)
        pr = pr_curve_points(scores, truths)
        path = curves / f"roc_{name}.csv"
        _write_csv(path, ["fpr", "tpr"], roc)
        written.append(path)
        path = curves / f"pr_{name}.csv"
        _write_csv(path, ["recall", "precision"], pr)
        written.append(path)

        ax = axes[0][c]
        ax.plot(*zip(*roc), lw=1.5)
        ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
        ax.set_title(f"{name} ROC (AUROC {report.per_class[name].auroc:.3f})")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("sensitivity")
        ax = axes[1][c]
        ax.plot(*zip(*pr), lw=1.5, color="darkorange")
        ax.set_title(f"{name} PR (AUPRC {report.per_class[name].auprc:.3f})")
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_ylim(0, 1.02)
    fig.tight_layout()
    path = figures / "roc_pr.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    # False-positive severity and relative risk
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, class_idx, fractions in (
        (axes[0], HYPO, HYPO_FRACTIONS),
        (axes[1], HYPER, HYPER_FRACTIONS),
    ):
        name = CLASS_NAMES[class_idx]
        curve = fp_severity_curve(scored, class_idx, fractions)
        path = curves / f"fp_severity_{name}.csv"
        _write_csv(path, ["fraction_flagged", "mean_false_positive_value"], curve)
        written.append(path)
        xs = [f for f, v in curve if not math.isnan(v)]
        ys = [v for _, v in curve if not math.isnan(v)]
        ax.plot(xs, ys, marker="o", ms=3)
        threshold = 70.0 if class_idx == HYPO else 180.0
        ax.axhline(threshold, ls="--", lw=0.8, color="gray")
        ax.set_title(f"mean reading of {name} false positives")
        ax.set_xlabel("fraction flagged at risk")
        ax.set_ylabel("mg/dL")
    fig.tight_layout()
    path = figures / "fp_severity.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5.5, 4))
    for class_idx, fractions, color in (
        (HYPO, HYPO_FRACTIONS, "tab:red"),
        (HYPER, HYPER_FRACTIONS, "tab:blue"),
    ):
        name = CLASS_NAMES[class_idx]
        curve = relative_risk_curve(scored, class_idx, fractions)
        path = curves / f"relative_risk_{name}.csv"
        _write_csv(
            path,
            ["fraction_flagged", "relative_risk"],
            [(f, v if math.isfinite(v) else "inf") for f, v in curve],
        )
        written.append(path)
        finite = [(f, v) for f, v in curve if math.isfinite(v)]
        if finite:
            ax.plot(*zip(*finite), marker="o", ms=3, label=name, color=color)
    ax.set_xlabel("fraction flagged at risk")
    ax.set_ylabel("relative risk")
    ax.legend()
    fig.tight_layout()
    path = figures / "relative_risk.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    # Horizon degradation
    rows = time_bucket_report(scored)
    path = curves / "time_buckets.csv"
    time_buckets_to_csv(path, rows)
    written.append(path)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    centers = [(r.low_minutes + r.high_minutes) / 2 / 60 for r in rows]
    for metric, ax in (("auroc_per_class", axes[0]), ("auprc_per_class", axes[1])):
        for c in (HYPO, HYPER):
            values = [getattr(r, metric)[c] for r in rows]
            xs = [x for x, v in zip(centers, values) if not math.isnan(v)]
            ys = [v for v in values if not math.isnan(v)]
            ax.plot(xs, ys, marker="o", ms=3, label=CLASS_NAMES[c])
        ax.set_xlabel("hours to next reading")
        ax.set_ylabel(metric.split("_")[0].upper())
        ax.legend()
    fig.tight_layout()
    path = figures / "time_buckets.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def render_history(out_dir: Path, history) -> Path:
    """Loss and validation-metric curves for a training run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = [r.epoch for r in history]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(epochs, [r.train_loss for r in history], marker="o", ms=3)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("training loss")
    axes[1].plot(epochs, [r.val_auroc for r in history], marker="o", ms=3, label="macro AUROC")
    axes[1].plot(epochs, [r.val_auprc for r in history], marker="o", ms=3, label="macro AUPRC")
    axes[1].set_xlabel("epoch")
    axes[1].legend()
    fig.tight_layout()
    path = out_dir / "history.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
