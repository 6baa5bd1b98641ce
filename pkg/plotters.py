"""
# @Description:
SVG figures for loss landscapes and toy training runs
"""
import os
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from contour.grid import ContourGrid

matplotlib.rcParams["svg.hashsalt"] = "dpo-lab"

LOSS_COLORS = {"dpo": "tab:blue", "dpop": "tab:orange", "dpo-nll": "tab:green", "bdpo": "tab:red"}


def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_contour(grid: ContourGrid, path: str, title: str = None, n_levels: int = 12) -> str:
    """Filled log-spaced contours with labelled level lines and the reference marked."""
    values = grid.values
    lo, hi = float(values.min()), float(values.max())
    if lo > 0 and hi > lo:
        levels = np.geomspace(lo, hi, n_levels)
    else:
        levels = np.linspace(lo, hi if hi > lo else lo + 1.0, n_levels)
    xx, yy = np.meshgrid(grid.pw_axis, grid.pl_axis)

    fig, ax = plt.subplots(figsize=(6, 5))
    cfset = ax.contourf(xx, yy, values, cmap="Blues_r", levels=levels)
    cset = ax.contour(xx, yy, values, colors="k", levels=levels[::2], linewidths=0.6)
    ax.clabel(cset, inline=1, fontsize=7, fmt="%.3g")
    ax.plot(*grid.ref, marker="*", color="tab:red", markersize=10, label="reference")
    fig.colorbar(cfset, ax=ax)
    ax.set_xlabel(r"$\pi_\theta(y_w|x)$")
    ax.set_ylabel(r"$\pi_\theta(y_l|x)$")
    ax.set_title(title or grid.spec.kind.value)
    ax.legend(loc="upper right")
    return _save(fig, path)


def plot_training_dynamics(traces: Dict[str, pd.DataFrame], path: str) -> str:
    """One column per metric, one curve per loss (mean over pairs at each step)."""
    metrics = [
        ("p_chosen", "chosen prob."),
        ("p_rejected", "rejected prob."),
        ("in_dist_log_mass", "in-distribution log-mass"),
        ("kl_to_ref", "KL to reference"),
        ("nll_chosen", "NLL of chosen"),
    ]
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.5))
    for name, frame in traces.items():
        means = frame.groupby("step").mean(numeric_only=True)
        for ax, (column, label) in zip(axes, metrics):
            ax.plot(means.index, means[column], label=name, color=LOSS_COLORS.get(name))
            ax.set_title(label)
            ax.set_xlabel("step")
    axes[0].legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_final_probabilities(summary: pd.DataFrame, losses: List[str], path: str) -> str:
    """Bar chart of final probabilities per prompt; OOD responses are hatched."""
    prompts = sorted(summary.prompt.unique())
    fig, axes = plt.subplots(1, len(prompts), figsize=(4 * len(prompts), 3.5), sharey=True)
    axes = np.atleast_1d(axes)
    width = 0.8 / len(losses)
    for ax, prompt in zip(axes, prompts):
        rows = summary[summary.prompt == prompt]
        for k, name in enumerate(losses):
            part = rows[rows.loss == name].sort_values("response")
            bars = ax.bar(
                part.response + k * width, part.p_final, width,
                label=name, color=LOSS_COLORS.get(name),
            )
            for bar, role in zip(bars, part.role):
                if role == "ood":
                    bar.set_hatch("//")
                    bar.set_alpha(0.5)
        ax.set_title(f"prompt {prompt}")
        ax.set_xlabel("response")
    axes[0].set_ylabel("final probability")
    axes[0].legend()
    fig.tight_layout()
    return _save(fig, path)
