"""Report figures rendered alongside the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def budget_curves_figure(report: dict, out_dir: Path) -> Path:
    """Mean Dice vs annotated patches per method, one panel per group."""
    groups = sorted(report["groups"])
    fig, axes = plt.subplots(
        1, len(groups), figsize=(6 * len(groups), 4.5), squeeze=False
    )
    for ax, key in zip(axes[0], groups):
        group = report["groups"][key]
        budgets = group["budgets"]
        for method in sorted(group["methods"]):
            summary = group["methods"][method]
            means, stds = _per_budget_stats(summary, budgets)
            ax.plot(budgets, means, marker="o", markersize=3, label=method)
            if stds is not None:
                ax.fill_between(
                    budgets,
                    np.array(means) - np.array(stds),
                    np.array(means) + np.array(stds),
                    alpha=0.15,
                )
        ax.set_title(key)
        ax.set_xlabel("annotated patches")
        ax.set_ylabel("mean Dice")
        ax.set_ylim(0.0, 1.0)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_dir / "budget_curves.png")


def _per_budget_stats(summary: dict, budgets):
    curves = summary.get("dice_by_budget")
    if curves is None:
        return [summary["aubc_mean"]] * len(budgets), None
    means = [float(np.mean(curves[str(b)])) for b in budgets]
    stds = [float(np.std(curves[str(b)])) for b in budgets]
    return means, stds


def ppm_figure(report: dict, out_dir: Path) -> Path:
    """Heatmap of the pairwise penalty matrix."""
    block = report["ppm"]
    methods = block["methods"]
    matrix = np.array(block["matrix"])
    fig, ax = plt.subplots(figsize=(1.1 * len(methods) + 2, 1.0 * len(methods) + 1.5))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(methods)), methods, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(methods)), methods, fontsize=8)
    for i in range(len(methods)):
        for j in range(len(methods)):
            ax.text(
                j, i, f"{matrix[i, j]:.2f}",
                ha="center", va="center",
                color="white" if matrix[i, j] < 0.5 else "black",
                fontsize=7,
            )
    ax.set_title(f"Row significantly beats column ({block['num_cells']} cells)")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    return _save(fig, out_dir / "ppm.png")


def win_lose_figure(report: dict, out_dir: Path) -> Path:
    """Win/lose counts per method pair."""
    pairs = sorted(report["win_lose"])
    wins = [report["win_lose"][p]["wins"] for p in pairs]
    losses = [report["win_lose"][p]["losses"] for p in pairs]
    y = np.arange(len(pairs))
    fig, ax = plt.subplots(figsize=(7, 0.5 * len(pairs) + 2))
    ax.barh(y - 0.2, wins, height=0.4, label="first wins", color="tab:green")
    ax.barh(y + 0.2, losses, height=0.4, label="second wins", color="tab:red")
    ax.set_yticks(y, pairs, fontsize=8)
    ax.set_xlabel("significant wins (cells)")
    ax.legend(fontsize=8)
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    return _save(fig, out_dir / "winlose.png")


def fg_eff_figure(report: dict, out_dir: Path) -> Path:
    """Annotated-foreground fraction vs Dice, with the fitted decay curves."""
    groups = sorted(report["groups"])
    fig, axes = plt.subplots(
        1, len(groups), figsize=(6 * len(groups), 4.5), squeeze=False
    )
    for ax, key in zip(axes[0], groups):
        group = report["groups"][key]
        for method in sorted(group["methods"]):
            entry = group["methods"][method]["fg_eff"]
            pts = np.array(entry["points"]) if entry["points"] else np.empty((0, 2))
            if pts.size:
                scatter = ax.scatter(pts[:, 0], pts[:, 1], s=12, label=None)
                color = scatter.get_facecolor()[0]
            else:
                color = None
            gamma = entry["gamma"]
            if gamma is not None and pts.size:
                t = np.linspace(entry["t0_hat"], float(pts[:, 0].max()), 100)
                y = (entry["y0_hat"] - entry["yfull_hat"]) * np.exp(
                    np.clip(-gamma * (t - entry["t0_hat"]), -700, 700)
                ) + entry["yfull_hat"]
                ax.plot(t, y, color=color, label=f"{method} (rate {gamma:.2f})")
        ax.axhline(
            report["y_full"]["value"], linestyle="--", color="gray",
            label="full-data reference",
        )
        ax.set_title(key)
        ax.set_xlabel("fraction of foreground voxels annotated")
        ax.set_ylabel("mean Dice")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_dir / "fg_eff.png")


def render_all(report: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    return [
        budget_curves_figure(report, out),
        ppm_figure(report, out),
        win_lose_figure(report, out),
        fg_eff_figure(report, out),
    ]
