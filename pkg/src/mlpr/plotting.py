"""Figures written next to the CSV reports."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

TASK_LABELS = {"click": "Click", "atc": "ATC", "purchase": "Purchase"}

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def _metric_key(r):
    return "AUC" if r["metric"] == "auc" else f"NDCG@{r['k']}"


def _save(fig, path):
    # fixed metadata keeps PNG bytes stable across reruns
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_metrics(rows, path, title="Test metrics"):
    """Grouped bars: one panel per metric, bars per task, one colour per run."""
    with plt.rc_context(STYLE):
        variants = list(dict.fromkeys(r["model_variant"] for r in rows))
        metrics = list(dict.fromkeys(_metric_key(r) for r in rows))
        tasks = list(dict.fromkeys(r["task"] for r in rows))
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.0), squeeze=False)
        width = 0.8 / max(1, len(variants))
        for ax, m in zip(axes[0], metrics):
            for j, v in enumerate(variants):
                vals = []
                for t in tasks:
                    hit = [r["value"] for r in rows
                           if r["model_variant"] == v and r["task"] == t and _metric_key(r) == m]
                    vals.append(hit[0] if hit else math.nan)
                ax.bar(np.arange(len(tasks)) + j * width, vals, width, label=v)
            ax.set_xticks(np.arange(len(tasks)) + width * (len(variants) - 1) / 2)
            ax.set_xticklabels([TASK_LABELS.get(t, t) for t in tasks])
            ax.set_title(m)
            finite = [r["value"] for r in rows if _metric_key(r) == m
                      and isinstance(r["value"], float) and math.isfinite(r["value"])]
            if finite:
                ax.set_ylim(max(0.0, min(finite) - 0.05), min(1.0, max(finite) + 0.05))
        axes[0][-1].legend(fontsize=7, loc="lower right")
        fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)


def plot_ablation(rows, path):
    """Metric trajectory across the incremental variants, one line per task."""
    with plt.rc_context(STYLE):
        variants = list(dict.fromkeys(r["model_variant"] for r in rows))
        metrics = list(dict.fromkeys(_metric_key(r) for r in rows))
        tasks = list(dict.fromkeys(r["task"] for r in rows))
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.6 * len(metrics), 3.2), squeeze=False)
        x = np.arange(len(variants))
        for ax, m in zip(axes[0], metrics):
            for t in tasks:
                ys = []
                for v in variants:
                    hit = [r["value"] for r in rows
                           if r["model_variant"] == v and r["task"] == t and _metric_key(r) == m]
                    ys.append(hit[0] if hit else math.nan)
                ax.plot(x, ys, marker="o", label=TASK_LABELS.get(t, t))
            ax.set_xticks(x)
            ax.set_xticklabels(variants, rotation=35, ha="right", fontsize=7)
            ax.set_title(m)
        axes[0][0].legend(fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def plot_latency(samples_by_mode, p99_by_mode, path):
    """Empirical CDF of per-query ranking time with the P99 marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        for mode, xs in samples_by_mode.items():
            xs = np.sort(np.asarray(xs))
            ax.step(xs, np.arange(1, xs.size + 1) / xs.size, where="post", label=mode)
            ax.axvline(p99_by_mode[mode], ls=":", lw=0.8, color=ax.lines[-1].get_color())
        ax.set_xlabel("per-query ranking time (ms)")
        ax.set_ylabel("fraction of queries")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)


def plot_training(history, path):
    """Per-task and total training loss by step."""
    h = np.asarray(history, dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        if h.size:
            for col, label in zip(range(1, 5), ("click", "atc", "purchase", "total")):
                ax.plot(h[:, 0], h[:, col], lw=0.8, label=label)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)
