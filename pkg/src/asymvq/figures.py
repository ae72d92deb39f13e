"""Matplotlib renderings of training logs and evaluation reports.

Everything draws through the Agg backend and writes PNG files next to the
delimited outputs they summarize, so a run directory is self-describing.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .errors import InputError

__all__ = ["plot_coverage_hist", "plot_loss_curves", "plot_pre_error_bins"]

_BIN_LABELS = ("0-10%", "10-20%", "20-30%", "30-40%", "40-50%", ">=50%")


def plot_loss_curves(loss_csv, out_path) -> Path:
    """Loss components and the learning-rate schedule from a training log."""
    loss_csv = Path(loss_csv)
    if not loss_csv.is_file():
        raise InputError(f"loss log not found: {loss_csv}")
    with loss_csv.open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InputError(f"loss log is empty: {loss_csv}")
    steps = [int(r["step"]) for r in rows]

    fig, (ax_loss, ax_lr) = plt.subplots(
        2, 1, figsize=(8, 6), sharex=True, gridspec_kw={"height_ratios": [3, 1]}
    )
    for key, label in [
        ("loss_total", "total"),
        ("loss_pixel", "pixel"),
        ("loss_percep", "perceptual"),
        ("loss_gan", "generator"),
        ("loss_kl", "kl"),
    ]:
        values = [float(r[key]) for r in rows]
        if any(v != 0.0 for v in values):
            ax_loss.plot(steps, values, label=label, linewidth=1.0)
    ax_loss.set_ylabel("loss")
    ax_loss.legend(loc="upper right", fontsize=8)
    ax_loss.grid(alpha=0.3)

    ax_lr.plot(steps, [float(r["lr"]) for r in rows], color="tab:gray", linewidth=1.0)
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.grid(alpha=0.3)

    return _save(fig, out_path)


def plot_pre_error_bins(reports, out_path, labels=None) -> Path:
    """Grouped bars of mean pre_error (x1e-5) per coverage bin.

    Accepts one report or a list; pass ``labels`` to name each series when
    comparing (e.g. conditioned vs unconditional decoding).
    """
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    if not reports:
        raise InputError("no reports to plot")
    if labels is None:
        labels = [r.model_id for r in reports]

    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / len(reports)
    for i, (rep, label) in enumerate(zip(reports, labels)):
        by_bin = rep.aggregates()["by_bin"]
        xs, ys = [], []
        for b in range(len(_BIN_LABELS)):
            s = by_bin.get(str(b))
            if s and s["pre_error"] is not None:
                xs.append(b + i * width)
                ys.append(s["pre_error"] / 1e-5)
        ax.bar(xs, ys, width=width, label=str(label))
    ax.set_xticks([b + 0.4 - width / 2 for b in range(len(_BIN_LABELS))])
    ax.set_xticklabels(_BIN_LABELS, fontsize=8)
    ax.set_xlabel("mask coverage")
    ax.set_ylabel("pre_error (x1e-5)")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, out_path)


def plot_coverage_hist(coverages, out_path) -> Path:
    coverages = list(coverages)
    if not coverages:
        raise InputError("no coverages to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(coverages, bins=20, range=(0.0, 1.0), color="tab:blue", alpha=0.8)
    ax.set_xlabel("mask coverage")
    ax.set_ylabel("count")
    ax.grid(alpha=0.3)
    return _save(fig, out_path)


def _save(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
