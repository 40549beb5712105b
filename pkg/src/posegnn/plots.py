"""Report figures rendered to PNG next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (1 + 5 ** 0.5) / 2

RC = {
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


def new_figure(width: float = 5.0, height: Optional[float] = None):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(width, height or width / GOLDEN))
    return fig, ax


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(RC):
        fig.tight_layout()
        # fixed metadata keeps the PNG bytes stable across reruns
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curve(curve: Sequence[Tuple[int, str, float, float]], path) -> Path:
    fig, ax = new_figure()
    for split, style in (("train", "-o"), ("val", "--s")):
        pts = [(e, l) for e, s, l, _ in curve if s == split]
        if pts:
            e, l = zip(*pts)
            ax.plot(e, l, style, ms=3, label=split)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if curve:
        ax.legend(frameon=False)
    return save(fig, path)


def joint_bars(names: Sequence[str], pckh: np.ndarray, pck: np.ndarray, path) -> Path:
    fig, ax = new_figure(6.5)
    x = np.arange(len(names))
    ax.bar(x - 0.2, pckh, 0.4, label="PCKh@0.5")
    ax.bar(x + 0.2, pck, 0.4, label="PCK@0.2")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=60, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.legend(frameon=False, ncol=2)
    return save(fig, path)


def stage_accuracy(stage_pckh: Sequence[float], path, label: Optional[str] = None) -> Path:
    fig, ax = new_figure(4.0)
    names = [f"stage {i + 1}" for i in range(len(stage_pckh) - 1)] + ["final"]
    ax.plot(range(len(stage_pckh)), stage_pckh, "-o", ms=4, label=label)
    ax.set_xticks(range(len(stage_pckh)))
    ax.set_xticklabels(names)
    ax.set_ylabel("mean PCKh@0.5")
    if label:
        ax.legend(frameon=False)
    return save(fig, path)


def ablation_bars(rows: Dict[str, float], path) -> Path:
    """``rows`` maps a configuration label to its mean PCKh."""
    fig, ax = new_figure()
    labels = list(rows)
    vals = [rows[k] for k in labels]
    ax.bar(range(len(labels)), vals, color="0.55")
    for i, v in enumerate(vals):
        ax.text(i, v, f"{100 * v:.1f}", ha="center", va="bottom", fontsize=7)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    lo = min(vals) if vals else 0.0
    ax.set_ylim(max(0.0, lo - 0.1), 1.0)
    ax.set_ylabel("mean PCKh@0.5")
    return save(fig, path)


def t_curve(series: Dict[str, List[Tuple[int, float]]], path) -> Path:
    """One line per graph kind: mean PCKh against T."""
    fig, ax = new_figure()
    for name, pts in sorted(series.items()):
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "-o", ms=4, label=name)
    ax.set_xlabel("propagation steps T")
    ax.set_ylabel("mean PCKh@0.5")
    ax.legend(frameon=False)
    return save(fig, path)
