"""Heatmap decoding and PCK / PCKh scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .errors import ValidationError


def decode(heatmaps: np.ndarray) -> np.ndarray:
    """Argmax location of each map as ``(x, y)`` = ``(col, row)``.

    Accepts ``[..., H, W]``; ties resolve to the smallest row, then smallest
    column (first maximum in row-major order).
    """
    hm = np.asarray(heatmaps)
    H, W = hm.shape[-2:]
    flat = hm.reshape(-1, H * W).argmax(axis=1)
    rows, cols = np.divmod(flat, W)
    return np.stack([cols, rows], axis=-1).reshape(hm.shape[:-2] + (2,)).astype(np.float64)


def _normalised_hits(pred, gt, length, threshold, what):
    length = np.asarray(length, dtype=np.float64)
    if np.any(length <= 0):
        raise ValidationError(f"{what} must be positive")
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    d = np.hypot(pred[..., 0] - gt[..., 0], pred[..., 1] - gt[..., 1])
    if length.ndim:
        length = length.reshape(length.shape + (1,) * (d.ndim - length.ndim))
    return d <= threshold * length


def pckh(pred, gt, head_len, threshold: float = 0.5) -> np.ndarray:
    """Per-joint correctness: distance within ``threshold`` head lengths (inclusive)."""
    return _normalised_hits(pred, gt, head_len, threshold, "head_len")


def pck(pred, gt, torso_len, threshold: float = 0.2) -> np.ndarray:
    """Per-joint correctness: distance within ``threshold`` torso lengths (inclusive)."""
    return _normalised_hits(pred, gt, torso_len, threshold, "torso_len")


def joint_rates(hits: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """Fraction of visible samples correct, per joint (columns of ``[N, K]``)."""
    vis = np.asarray(visible, bool)
    n = vis.sum(axis=0)
    return np.where(n > 0, (hits & vis).sum(axis=0) / np.maximum(n, 1), 0.0)


@dataclass
class EvalReport:
    joint_names: List[str]
    pckh: np.ndarray  # per-joint rates
    pck: np.ndarray
    stage_pckh: List[float]  # backbone stages 1..S, then the refined output
    meta: Dict[str, str] = field(default_factory=dict)
    loss: float = float("nan")

    @property
    def mean_pckh(self) -> float:
        return float(np.mean(self.pckh))

    @property
    def mean_pck(self) -> float:
        return float(np.mean(self.pck))

    def rows(self, tag: str, extra: Dict[str, float] | None = None):
        m = self.meta
        key = (tag, m.get("cpf", ""), m.get("graph", ""), m.get("T", ""), m.get("seed", ""))
        for name, h, p in zip(self.joint_names, self.pckh, self.pck):
            yield key + (name, "pckh", h)
            yield key + (name, "pck", p)
        yield key + ("mean", "pckh", self.mean_pckh)
        yield key + ("mean", "pck", self.mean_pck)
        for i, v in enumerate(self.stage_pckh[:-1], start=1):
            yield key + ("mean", f"pckh_stage{i}", v)
        yield key + ("mean", "pckh_final", self.stage_pckh[-1])
        for k, v in (extra or {}).items():
            yield key + ("all", k, v)


METRICS_HEADER = "tag,cpf,graph,T,seed,joint,metric,value"


def format_rows(rows) -> str:
    lines = [METRICS_HEADER]
    for r in rows:
        *head, value = r
        lines.append(",".join(str(x) for x in head) + f",{value:.6f}")
    return "\n".join(lines) + "\n"
