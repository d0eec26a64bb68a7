"""Report rendering: key-value metric files, TSV logs, and PNG figures.

Metric files are byte-stable for a fixed seed (sorted keys, fixed float
format, no timestamps); wall-clock data stays in the TSV training logs.
"""
from __future__ import annotations

import os
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def metrics_text(metrics: dict) -> str:
    lines = [f"{key} = {format_value(metrics[key])}" for key in sorted(metrics)]
    return "\n".join(lines) + "\n"


def write_metrics(path: str, metrics: dict) -> str:
    text = metrics_text(metrics)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


def write_tsv_log(path: str, rows: Sequence[dict]) -> None:
    """Rows may have ragged keys; the header is their first-seen union."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(format_value(row[c]) if c in row else "" for c in columns) + "\n")


def render_training_curves(rows: Sequence[dict], keys: Sequence[str], path: str,
                           x_key: Optional[str] = None, title: str = "training") -> None:
    """Line plot of the requested log columns, one subplot per key."""
    keys = [k for k in keys if any(k in r for r in rows)]
    if not keys or not rows:
        return
    if x_key is None:
        x_key = "epoch" if "epoch" in rows[0] else "iteration"
    fig, axes = plt.subplots(len(keys), 1, figsize=(6, 2.2 * len(keys)), sharex=True)
    if len(keys) == 1:
        axes = [axes]
    for ax, key in zip(axes, keys):
        xs = [r[x_key] for r in rows if key in r]
        ys = [r[key] for r in rows if key in r]
        ax.plot(xs, ys, lw=1.2)
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel(x_key)
    axes[0].set_title(title)
    fig.tight_layout()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_rank_histogram(ranks: Sequence[int], path: str, title: str = "test ranks") -> None:
    if not ranks:
        return
    fig, ax = plt.subplots(figsize=(6, 3))
    top = max(ranks)
    ax.hist(ranks, bins=range(1, top + 2), align="left", rwidth=0.85)
    ax.set_xlabel("rank of true answer")
    ax.set_ylabel("queries")
    ax.set_title(title)
    fig.tight_layout()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_probability_histogram(probs: Sequence[float], path: str,
                                 title: str = "success probability") -> None:
    if not len(probs):
        return
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.hist(probs, bins=20)
    ax.set_xlabel("probability")
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
