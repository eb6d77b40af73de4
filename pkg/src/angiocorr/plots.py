"""Matplotlib figure emission for training logs and trace overlays."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def loss_curve_figure(log: list[dict], path) -> Path:
    """Training loss per step, one line per logged component."""
    path = Path(path)
    steps = [row["step"] for row in log]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key in log[0]:
        if key == "step":
            continue
        ax.plot(steps, [row[key] for row in log], label=key, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def trace_overlay_figure(image: np.ndarray, paths: dict[str, np.ndarray], out_path) -> Path:
    """Grayscale view with traced pixel paths drawn over it."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.imshow(image, cmap="gray", vmin=0.0, vmax=1.0)
    for label, path in paths.items():
        path = np.asarray(path)
        if len(path):
            ax.plot(path[:, 0], path[:, 1], linewidth=1.2, label=label)
    ax.set_axis_off()
    if paths:
        ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
