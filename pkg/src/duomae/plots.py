"""Static charts from metrics logs. No model required, deterministic bytes."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import EmptyInputError

_SAVE_KWARGS = {"format": "png", "dpi": 110, "metadata": {"Software": None}}

LOSS_KEYS = ("total", "image_recon", "token_recon", "image_feature", "text_feature", "pair_match")


def plot_loss_curves(records: list[dict], out_path: str, title: str = "training loss") -> None:
    """Loss components over steps from one metrics stream."""
    if not records:
        raise EmptyInputError("metrics log is empty; nothing to plot")
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key in LOSS_KEYS:
        if key in records[0]:
            ax.plot(steps, [r[key] for r in records], label=key, linewidth=1.2)
    if "loss" in records[0]:
        ax.plot(steps, [r["loss"] for r in records], label="loss", linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_alpha_sweep(curves: dict[float, list[dict]], out_path: str) -> None:
    """One chart, one composite-loss series per trade-off value."""
    if not curves or all(not records for records in curves.values()):
        raise EmptyInputError("alpha sweep has no runs to plot")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for alpha in sorted(curves):
        records = curves[alpha]
        if not records:
            raise EmptyInputError(f"alpha={alpha:g} run has an empty metrics log")
        ax.plot([r["step"] for r in records], [r["total"] for r in records], label=f"alpha={alpha:g}", linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("composite loss")
    ax.set_title("feature/data trade-off sweep")
    ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_design_matrix(summary: dict, out_path: str) -> None:
    """Bar chart of mean test accuracy per ablation row."""
    rows = summary.get("rows", {})
    if not rows:
        raise EmptyInputError("ablation summary has no rows to plot")
    names = list(rows)
    means = [rows[name]["mean"] for name in names]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(range(len(names)), means, color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean test accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("pipeline component ablation")
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
