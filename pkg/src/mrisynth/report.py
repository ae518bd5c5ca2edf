"""Evaluation outputs: delimited tables, a readable text report, figures.

Figures are rendered headless (Agg) straight to files: per-subject slice
montages of real vs synthesized volumes, and training loss curves.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import AggregateRow, MetricRecord, MetricReport

STAT_COLUMNS = ("Mean", "Std", "25 Quantile", "Median", "75 Quantile")


def write_records_csv(records: Sequence[MetricRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["subject", "missing_modality", "metric", "region", "value"])
        for r in records:
            writer.writerow(
                [r.subject, r.missing_modality or "", r.metric, r.region or "", f"{r.value:.6f}"]
            )


def write_aggregates_csv(rows: Sequence[AggregateRow], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["metric", "group", "n", "n_excluded", "mean", "std", "q25", "median", "q75", "flags"]
        )
        for row in rows:
            group = ";".join(f"{k}={v}" for k, v in row.group)
            writer.writerow(
                [
                    row.metric,
                    group,
                    row.n,
                    row.n_excluded,
                    _fmt(row.mean),
                    _fmt(row.std),
                    _fmt(row.q25),
                    _fmt(row.median),
                    _fmt(row.q75),
                    "|".join(row.flags),
                ]
            )


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.4f}"


def format_aggregate_table(rows: Sequence[AggregateRow], title: str = "Results") -> str:
    """Fixed-width table with the five summary statistics per group."""
    header = ["Metric", *STAT_COLUMNS, "n", "excluded"]
    body = []
    for row in rows:
        label = " ".join(v for _, v in row.group if v != "-") or row.metric
        body.append(
            [
                label,
                _fmt(row.mean),
                _fmt(row.std),
                _fmt(row.q25),
                _fmt(row.median),
                _fmt(row.q75),
                str(row.n),
                str(row.n_excluded),
            ]
        )
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    lines = [title, "-" * (sum(widths) + 2 * len(widths))]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for b in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(b, widths)))
    return "\n".join(lines) + "\n"


def write_report_text(report: MetricReport, path: str | Path, title: str = "Results") -> None:
    Path(path).write_text(format_aggregate_table(report.aggregates, title=title))


def _mid_axial_slice(vol: np.ndarray) -> np.ndarray:
    return vol[:, :, vol.shape[2] // 2].T


def save_montage(
    panels: Mapping[str, np.ndarray],
    path: str | Path,
    suptitle: str | None = None,
) -> None:
    """One row of axial mid-slices, one panel per named volume."""
    if not panels:
        raise ValueError("no panels to draw")
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(2.4 * n, 2.8))
    if n == 1:
        axes = [axes]
    for ax, (name, vol) in zip(axes, panels.items()):
        ax.imshow(_mid_axial_slice(np.asarray(vol)), cmap="gray", origin="lower")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    if suptitle:
        fig.suptitle(suptitle, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_loss_curve_figure(curve: Sequence[tuple[int, float]], path: str | Path) -> None:
    steps = [s for s, _ in curve]
    losses = [l for _, l in curve]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(steps, losses, lw=0.9)
    ax.set_xlabel("step")
    ax.set_ylabel("MSE loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
