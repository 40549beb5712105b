"""RMSProp training with deep supervision, evaluation and the ablation grid."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .errors import NumericError, ValidationError
from .metrics import EvalReport, decode, joint_rates, pck, pckh
from .network import NetConfig, PoseNet, deep_supervision_loss
from .pgnn import pgnn_loss
from .posegraph import preset
from .synthgen import AugmentConfig, Sample, SampleBatch, Skeleton, augment, lsp_skeleton

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class OptimState:
    lr: float
    rho: float = 0.99
    eps: float = 1e-8
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def rmsprop_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: OptimState) -> None:
    """``v <- rho v + (1 - rho) g^2``; ``theta <- theta - lr g / (sqrt(v) + eps)``, in place."""
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        v = state.v.get(i)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.rho * v + (1.0 - state.rho) * g * g
        state.v[i] = v
        p.data -= (state.lr * g / (np.sqrt(v) + state.eps)).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# schedule / results


@dataclass
class Schedule:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 2.5e-3
    # full-scale recipe: 250 epochs, lr 1e-3, dropped x0.1 at epoch 200
    lr_drop_frac: float = 0.8
    lr_drop_factor: float = 0.1
    rho: float = 0.99
    eps: float = 1e-8
    augment: bool = True
    aug: AugmentConfig = AugmentConfig()
    sigma: float = 1.0

    @property
    def drop_epoch(self) -> int:
        return int(round(self.lr_drop_frac * self.epochs))


@dataclass
class TrainResult:
    curve: List[Tuple[int, str, float, float]]
    report: Optional[EvalReport]
    seconds: float


LOSS_HEADER = "epoch,split,loss,mean_pckh"


def format_curve(curve) -> str:
    lines = [LOSS_HEADER] + [f"{e},{s},{l:.8g},{p:.6f}" for e, s, l, p in curve]
    return "\n".join(lines) + "\n"


def _row_sample(data: SampleBatch, i: int) -> Sample:
    return Sample(data.images[i], data.joints[i], data.visible[i], data.heatmaps[i],
                  float(data.head_len[i]), float(data.torso_len[i]))


def _augmented_batch(data: SampleBatch, idx, seeds, sched: Schedule, skel: Skeleton, dtype) -> SampleBatch:
    out = []
    for i, s in zip(idx, seeds):
        out.append(augment(_row_sample(data, i), int(s), sched.aug, skel, sched.sigma))
    return SampleBatch(
        images=np.stack([s.image for s in out]).astype(dtype),
        joints=np.stack([s.joints for s in out]),
        visible=np.stack([s.visible for s in out]),
        heatmaps=np.stack([s.gt_heatmaps for s in out]).astype(dtype),
        head_len=np.array([s.head_len for s in out]),
        torso_len=np.array([s.torso_len for s in out]),
    )


def train(
    net: PoseNet,
    train_set: SampleBatch,
    val_set: Optional[SampleBatch],
    schedule: Schedule,
    seed: int,
    skeleton: Optional[Skeleton] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Train ``net`` in place; deterministic given ``seed``."""
    if len(train_set) == 0:
        raise ValidationError("training set is empty")
    if schedule.epochs < 0 or schedule.batch_size < 1 or schedule.lr <= 0:
        raise ValidationError(f"invalid schedule {schedule}")
    skel = skeleton or lsp_skeleton()
    t0 = time.perf_counter()
    named = net.parameters()
    params = [p for _, p in named]
    state = OptimState(schedule.lr, schedule.rho, schedule.eps)
    curve = []
    N, bs = len(train_set), schedule.batch_size
    dtype = net.dtype
    tape = Tape()

    for epoch in range(schedule.epochs):
        state.lr = schedule.lr * (schedule.lr_drop_factor if epoch >= schedule.drop_epoch else 1.0)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 30, epoch]))
        order = rng.permutation(N)
        aug_seeds = rng.integers(0, 2**32 - 1, size=N, dtype=np.uint64)
        losses, hits = [], []
        for b, start in enumerate(range(0, N, bs)):
            idx = order[start:start + bs]
            if schedule.augment:
                batch = _augmented_batch(train_set, idx, aug_seeds[idx], schedule, skel, dtype)
            else:
                batch = train_set.subset(idx)
            for p in params:
                p.zero_grad()
            tape.reset()
            with tape:
                preds, final = net.forward(Tensor(batch.images.astype(dtype, copy=False)))
                loss = deep_supervision_loss(preds, final, Tensor(batch.heatmaps.astype(dtype, copy=False)))
            backward(loss)
            value = loss.item()
            if not np.isfinite(value):
                grads = [np.abs(p.grad).max() for p in params if p.grad is not None and p.grad.size]
                gmax = float(np.max(grads)) if grads else 0.0  # nan if any gradient is nan
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, batch {b}; max |grad| = {gmax:.3e}")
            rmsprop_step(params, [p.grad for p in params], state)
            losses.append(value * len(idx))
            pred_xy = decode(final.data)
            hits.append(pckh(pred_xy, batch.joints, batch.head_len) & batch.visible)
        train_loss = float(np.sum(losses) / N)
        train_pckh = float(np.mean(np.concatenate(hits).mean(axis=0)))
        curve.append((epoch, "train", train_loss, train_pckh))
        msg = f"epoch {epoch}: train loss {train_loss:.5f} pckh {train_pckh:.4f}"
        if val_set is not None and len(val_set):
            rep = evaluate(net, val_set)
            curve.append((epoch, "val", rep.loss, rep.mean_pckh))
            msg += f" | val loss {rep.loss:.5f} pckh {rep.mean_pckh:.4f}"
        log.info(msg)
        if progress:
            progress(msg)

    report = evaluate(net, val_set) if val_set is not None and len(val_set) else None
    return TrainResult(curve, report, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# evaluation


def predict(net: PoseNet, images: np.ndarray, batch_size: int = 32) -> Tuple[List[np.ndarray], np.ndarray]:
    """Stage predictions and refined output as arrays, computed without a tape."""
    stages: List[List[np.ndarray]] = [[] for _ in range(net.cfg.stages)]
    finals = []
    with ad.no_tape():
        for start in range(0, len(images), batch_size):
            x = Tensor(images[start:start + batch_size].astype(net.dtype, copy=False))
            preds, final = net.forward(x)
            for s, p in enumerate(preds):
                stages[s].append(p.data)
            finals.append(final.data)
    return [np.concatenate(s) for s in stages], np.concatenate(finals)


def evaluate(net: PoseNet, data: SampleBatch, skeleton: Optional[Skeleton] = None,
             meta: Optional[Dict[str, str]] = None, batch_size: int = 32) -> EvalReport:
    skel = skeleton or lsp_skeleton()
    if data.heatmaps.shape[1] != net.cfg.num_joints:
        raise ValidationError(
            f"K mismatch: dataset has {data.heatmaps.shape[1]} joints, model has {net.cfg.num_joints}")
    if tuple(data.heatmaps.shape[2:]) != tuple(net.cfg.map_size):
        raise ValidationError(
            f"map size mismatch: dataset {data.heatmaps.shape[2:]}, model {net.cfg.map_size}")
    stage_maps, final = predict(net, data.images, batch_size)
    with ad.no_tape():
        loss = pgnn_loss(Tensor(final.astype(np.float64)), Tensor(data.heatmaps.astype(np.float64))).item()

    def rate(maps, which="pckh"):
        xy = decode(maps)
        if which == "pckh":
            return joint_rates(pckh(xy, data.joints, data.head_len), data.visible)
        return joint_rates(pck(xy, data.joints, data.torso_len), data.visible)

    per_pckh = rate(final)
    stage = [float(np.mean(rate(m))) for m in stage_maps] + [float(np.mean(per_pckh))]
    return EvalReport(
        joint_names=list(skel.joint_names),
        pckh=per_pckh,
        pck=rate(final, "pck"),
        stage_pckh=stage,
        meta=dict(meta or {}),
        loss=loss,
    )


# ---------------------------------------------------------------------------
# ablation grid


@dataclass(frozen=True)
class Cell:
    cpf: bool
    T: int
    graph: str
    seed: int

    @property
    def tag(self) -> str:
        return f"cpf{'on' if self.cpf else 'off'}_{self.graph}_T{self.T}_s{self.seed}"

    def meta(self) -> Dict[str, str]:
        return {"cpf": "on" if self.cpf else "off", "graph": self.graph, "T": str(self.T), "seed": str(self.seed)}


def default_grid(seeds: Iterable[int] = (0,)) -> List[Cell]:
    return [Cell(c, T, g, s) for s in seeds for c in (False, True) for g in ("tree", "loopy") for T in range(4)]


def run_cell(cell: Cell, base: NetConfig, train_set: SampleBatch, val_set: SampleBatch, schedule: Schedule,
             dtype=np.float64, skeleton: Optional[Skeleton] = None,
             progress: Optional[Callable[[str], None]] = None) -> Tuple[PoseNet, TrainResult]:
    skel = skeleton or lsp_skeleton()
    cfg = replace(base, cpf=cell.cpf, T=cell.T)
    net = PoseNet(cfg, preset(cell.graph, skel), seed=cell.seed, dtype=dtype)
    res = train(net, train_set, val_set, schedule, cell.seed, skel, progress)
    res.report.meta.update(cell.meta())
    return net, res


def ablate(cells: Sequence[Cell], base: NetConfig, train_set: SampleBatch, val_set: SampleBatch,
           schedule: Schedule, dtype=np.float64, skeleton: Optional[Skeleton] = None,
           progress: Optional[Callable[[str], None]] = None) -> List[Tuple[Cell, PoseNet, TrainResult]]:
    """Train and evaluate one model per cell on identical data."""
    out = []
    for cell in cells:
        net, res = run_cell(cell, base, train_set, val_set, schedule, dtype, skeleton, progress)
        if progress:
            progress(f"{cell.tag}: mean PCKh {res.report.mean_pckh:.4f} ({res.seconds:.1f}s)")
        out.append((cell, net, res))
    return out
