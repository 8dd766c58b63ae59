"""Figures written next to the CSV outputs of the CLI."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_history(history: list[dict], path) -> None:
    epochs = [r["epoch"] for r in history]
    fig, (ax_loss, ax_iou, ax_lr) = plt.subplots(1, 3, figsize=(12, 3.4))
    ax_loss.plot(epochs, [r["loss"] for r in history], color="tab:blue")
    ax_loss.set(xlabel="epoch", ylabel="training loss", title="loss")
    evaluated = [(r["epoch"], r["iou"], r["oa"]) for r in history if not math.isnan(r["iou"])]
    if evaluated:
        e, iou, oa = zip(*evaluated)
        ax_iou.plot(e, iou, marker="o", ms=3, label="IoU")
        ax_iou.plot(e, oa, marker="s", ms=3, label="OA")
        ax_iou.legend(loc="lower right")
    ax_iou.set(xlabel="epoch", ylim=(0, 1.02), title="held-out metrics")
    ax_lr.plot(epochs, [r["lr"] for r in history], color="tab:green")
    ax_lr.set(xlabel="epoch", ylabel="lr (end of epoch)", title="schedule", yscale="log")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_ablation(rows: list[dict], path) -> None:
    names = [r["mode"] for r in rows]
    x = np.arange(len(rows))
    fig, (ax_p, ax_i) = plt.subplots(1, 2, figsize=(10, 3.6))
    ax_p.bar(x, [r["params"] / 1e6 for r in rows], color="tab:gray")
    ax_p.set(xticks=x, ylabel="parameters (M)", title="model size")
    ax_p.set_xticklabels(names, rotation=20)
    ax_i.bar(x, [r["final_iou"] for r in rows], color="tab:orange")
    ax_i.set(xticks=x, ylabel="IoU", ylim=(0, 1), title="final held-out IoU")
    ax_i.set_xticklabels(names, rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_scan_orders(orders: dict[str, np.ndarray], H: int, W: int, path) -> None:
    """One panel per direction; pixel colour is the step at which it is visited."""
    fig, axes = plt.subplots(2, 4, figsize=(12, 6.4))
    for ax, (name, perm) in zip(axes.T.ravel(), orders.items()):
        visit = np.empty(H * W, dtype=int)
        visit[perm] = np.arange(H * W)
        ax.imshow(visit.reshape(H, W), cmap="viridis")
        if H * W <= 100:
            for idx, step in enumerate(visit):
                ax.text(idx % W, idx // W, str(step), ha="center", va="center", fontsize=6, color="w")
        ax.set_title(name, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
