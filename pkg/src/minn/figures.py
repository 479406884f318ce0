"""Plot rendering for run and sweep outputs.

Figures are written next to the CSV files so a results directory is
self-contained; the Agg backend keeps rendering headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_OPTS = {"dpi": 150, "bbox_inches": "tight"}


def plot_history(rows: list[dict], path) -> None:
    """Per-seed loss and test-accuracy curves; adds a transmit-power
    panel when the rows carry a power-control schedule."""
    if not rows:
        raise ValueError("no history rows to plot")
    has_power = "mean_power_dbm" in rows[0]
    n_panels = 3 if has_power else 2
    fig, axes = plt.subplots(1, n_panels, figsize=(4.2 * n_panels, 3.2))
    for seed in sorted({r["seed"] for r in rows}):
        sub = [r for r in rows if r["seed"] == seed]
        epochs = [r["epoch"] for r in sub]
        axes[0].plot(epochs, [r["loss"] for r in sub], label=f"seed {seed}")
        axes[1].plot(epochs, [r["test_acc"] for r in sub], label=f"seed {seed}")
        if has_power:
            axes[2].plot(epochs, [r["mean_power_dbm"] for r in sub], label=f"seed {seed}")
    axes[0].set_ylabel("training loss")
    axes[1].set_ylabel("test accuracy")
    if has_power:
        axes[2].set_ylabel("mean transmit power (dBm)")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def plot_sweep(rows: list[dict], axis: str, path) -> None:
    """Mean test accuracy against the swept value, per-seed points behind."""
    if not rows:
        raise ValueError("no sweep rows to plot")
    values = sorted({r["axis_value"] for r in rows})
    means = []
    stds = []
    for v in values:
        accs = [r["accuracy"] for r in rows if r["axis_value"] == v]
        means.append(float(np.mean(accs)))
        stds.append(float(np.std(accs)))
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    for r in rows:
        ax.plot(r["axis_value"], r["accuracy"], ".", color="gray", alpha=0.5, zorder=1)
    ax.errorbar(values, means, yerr=stds, marker="o", capsize=3, zorder=2)
    ax.set_xlabel(axis)
    ax.set_ylabel("test accuracy")
    ax.grid(True, alpha=0.3)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def plot_power_tradeoff(rows: list[dict], path) -> None:
    """Accuracy against realized power for a gamma sweep."""
    if not rows:
        raise ValueError("no sweep rows to plot")
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    for v in sorted({r["axis_value"] for r in rows}):
        sub = [r for r in rows if r["axis_value"] == v]
        power = float(np.mean([r["power"] for r in sub]))
        acc = float(np.mean([r["accuracy"] for r in sub]))
        ax.plot(power, acc, "o")
        ax.annotate(f"{v:g}", (power, acc), textcoords="offset points", xytext=(5, 4), fontsize=8)
    ax.set_xlabel("mean emitted power (W)")
    ax.set_ylabel("test accuracy")
    ax.grid(True, alpha=0.3)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
