"""CSV tables and matplotlib figures for training and experiment results."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import FormatError  # noqa: E402

__all__ = ["write_csv", "read_csv", "plot_ablation", "plot_sweep", "plot_training_curve"]

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def write_csv(rows: Sequence[Dict[str, object]], path) -> None:
    """Comma-separated table with a header row; columns in first-seen key order."""
    cols: List[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(r.get(k)) for k in cols})
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> List[Dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def _save(fig, path) -> None:
    try:
        fig.savefig(path, bbox_inches="tight")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


def plot_ablation(summary: Sequence[Dict[str, object]], path, title: str = "Component ablation") -> None:
    """Bar per row (mean target MCA, std error bar) with the baseline drawn as a line."""
    rows = [r for r in summary if r["label"] != "ST"]
    base = next((r for r in summary if r["label"] == "ST"), None)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        x = np.arange(len(rows))
        means = np.array([r["mean_mca"] for r in rows]) * 100
        stds = np.array([r["std_mca"] for r in rows]) * 100
        ax.bar(x, means, yerr=stds, color="#4c72b0", capsize=3, width=0.7)
        if base is not None:
            ax.axhline(base["mean_mca"] * 100, color="#c44e52", ls="--", lw=1, label="ST baseline")
            ax.legend(loc="lower right")
        ax.set_xticks(x)
        ax.set_xticklabels([r["label"] for r in rows], rotation=30, ha="right")
        ax.set_ylabel("target MCA (%)")
        ax.set_title(title)
        lo = min(means.min() if len(means) else 100, base["mean_mca"] * 100 if base else 100)
        ax.set_ylim(max(0.0, lo - 15), 100)
        _save(fig, path)


def plot_sweep(summary: Sequence[Dict[str, object]], param: str, path) -> None:
    """Mean target MCA against the swept value, with the baseline as a band."""
    rows = [r for r in summary if r["label"] != "ST"]
    base = next((r for r in summary if r["label"] == "ST"), None)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        try:
            xs = np.array([float(r[param]) for r in rows])
            labels = None
        except (TypeError, ValueError):
            xs = np.arange(len(rows), dtype=float)
            labels = [str(r[param]) for r in rows]
        m = np.array([r["mean_mca"] for r in rows]) * 100
        s = np.array([r["std_mca"] for r in rows]) * 100
        ax.errorbar(xs, m, yerr=s, marker="o", color="#4c72b0", capsize=3, label="ECACL")
        if base is not None:
            b, bs = base["mean_mca"] * 100, base["std_mca"] * 100
            ax.axhspan(b - bs, b + bs, color="#c44e52", alpha=0.15, lw=0)
            ax.axhline(b, color="#c44e52", ls="--", lw=1, label="ST baseline")
        if labels is not None:
            ax.set_xticks(xs)
            ax.set_xticklabels(labels)
        ax.set_xlabel(param)
        ax.set_ylabel("target MCA (%)")
        ax.legend(loc="lower right")
        _save(fig, path)


def plot_training_curve(records: Sequence[Dict[str, object]], path) -> None:
    """Loss components (left) and target MCA (right) over training steps."""
    train = [r for r in records if r["split"] == "train"]
    evals = [r for r in records if r["split"] != "train" and r.get("mca") is not None]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.2, 2.8))
        if train:
            steps = [r["step"] + 1 for r in train]
            for key in ("total", "ce", "ua", "cata", "cona"):
                a1.plot(steps, [r["losses"][key] for r in train], lw=1, label=key)
            a1.set_xlabel("step")
            a1.set_ylabel("loss")
            a1.legend(ncol=2)
        if evals:
            a2.plot([r["step"] for r in evals], [100 * r["mca"] for r in evals], marker=".", color="#55a868")
            a2.set_xlabel("step")
            a2.set_ylabel("target MCA (%)")
        _save(fig, path)
