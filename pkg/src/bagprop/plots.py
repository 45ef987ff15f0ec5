"""SVG line charts for experiment outputs. Presentational only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    _plt().close(fig)


def mae_curve_svg(curve, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(curve.sample_sizes, curve.mae, yerr=curve.sd, marker="o", capsize=3)
    ax.set_xlabel("sample size")
    ax.set_ylabel("mean absolute proportion error")
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    _save(fig, path)


def trace_svg(trace, path, title: str = ""):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = [r.epoch for r in trace.records]
    ax.plot(epochs, [r.train_prop_loss for r in trace.records], color="tab:red", label="train loss")
    ax.plot(epochs, [r.val_prop_loss for r in trace.records], color="tab:orange", label="val loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("proportion loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.train_acc for r in trace.records], color="tab:blue", label="train acc")
    ax2.plot(epochs, [r.test_acc for r in trace.records], color="tab:cyan", label="test acc")
    ax2.set_ylabel("instance accuracy")
    ax2.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], fontsize=7, loc="center right")
    fig.tight_layout()
    _save(fig, path)


def reliability_svg(table, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 4))
    centers = (table.edges[:-1] + table.edges[1:]) / 2
    mask = table.count > 0
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray")
    ax.bar(centers[mask], table.accuracy[mask], width=0.045, alpha=0.7)
    ax.set_xlabel("prediction confidence")
    ax.set_ylabel("accuracy")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    fig.tight_layout()
    _save(fig, path)


def confidence_hist_svg(counts, edges, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 3))
    centers = (np.asarray(edges[:-1]) + np.asarray(edges[1:])) / 2
    ax.bar(centers, counts, width=(edges[1] - edges[0]) * 0.9)
    ax.set_xlabel("max confidence")
    ax.set_ylabel("instances")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    _save(fig, path)
