"""Pose graph neural network: gated convolutional message passing over joint heatmaps.

Each node carries a spatial state map initialised from the backbone's final
prediction for that joint. For ``t = 1..T`` every node gathers messages from
its neighbours through a kernel owned by that directed edge, then all nodes
update simultaneously with a convolutional GRU whose weights belong to the
node. The refined prediction is the last state plus the initial one.

All directed-edge kernels are stored in one tensor and applied as a grouped
convolution; likewise for the per-node gate kernels. Nothing is shared between
edges or nodes, the grouping only batches the arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DegenerateDistributionError, ShapeError
from .posegraph import PoseGraph

GATE_KERNELS = ("wz", "uz", "wr", "ur", "wh", "uh")
GATE_BIASES = ("bz", "br", "bh")
MODES = ("gru", "mrf")


@dataclass
class NodeGate:
    """Gate parameters of one node: kernels ``[C, C, kg, kg]`` and biases ``[C]``."""

    wz: Tensor
    uz: Tensor
    wr: Tensor
    ur: Tensor
    wh: Tensor
    uh: Tensor
    bz: Tensor
    br: Tensor
    bh: Tensor

    @classmethod
    def zeros(cls, kg: int = 1, channels: int = 1, dtype=np.float64) -> "NodeGate":
        k = {n: Tensor(np.zeros((channels, channels, kg, kg), dtype)) for n in GATE_KERNELS}
        b = {n: Tensor(np.zeros(channels, dtype)) for n in GATE_BIASES}
        return cls(**k, **b)


class PgnnModel:
    """Parameters and topology of one PGNN.

    ``hidden`` > 1 lifts each node's single-channel unary map to ``hidden``
    channels with a per-node 1x1 convolution and projects back before the
    residual sum.
    """

    def __init__(
        self,
        graph: PoseGraph,
        T: int = 2,
        mode: str = "gru",
        km: int = 3,
        kg: int = 3,
        hidden: int = 1,
        seed: int = 0,
        dtype=np.float64,
        literal_t0: bool = False,
    ):
        if T < 0:
            raise ConfigError(f"T must be >= 0, got {T}")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        if km < 1 or kg < 1 or km % 2 == 0 or kg % 2 == 0:
            raise ConfigError(f"kernel sizes must be odd and positive (km={km}, kg={kg})")
        if hidden < 1 or (mode == "mrf" and hidden != 1):
            raise ConfigError(f"invalid hidden channel count {hidden} for mode {mode}")
        self.graph = graph
        self.T = T
        self.mode = mode
        self.km = km
        self.kg = kg
        self.hidden = hidden
        self.literal_t0 = literal_t0
        self.dtype = np.dtype(dtype)

        self.directed = graph.directed_edges()
        self.src = np.array([s for s, _ in self.directed], dtype=np.intp)
        self.dst = np.array([d for _, d in self.directed], dtype=np.intp)

        rng = np.random.default_rng(seed)
        K, C, E = graph.num_nodes, hidden, len(self.directed)

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape).astype(self.dtype), requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape, self.dtype), requires_grad=True)

        self.params: Dict[str, Tensor] = {}
        self.params["edge_w"] = uniform((max(E, 1) * C, C, km, km), C * km * km)
        self.params["edge_b"] = zeros(max(E, 1) * C)
        for n in GATE_KERNELS:
            self.params[n] = uniform((K * C, C, kg, kg), C * kg * kg)
        for n in GATE_BIASES:
            self.params[n] = zeros(K * C)
        if C > 1:
            self.params["lift_w"] = uniform((K * C, 1, 1, 1), 1)
            self.params["lift_b"] = zeros(K * C)
            self.params["proj_w"] = uniform((K, C, 1, 1), C)
            self.params["proj_b"] = zeros(K)
        for name, t in self.params.items():
            t.name = f"pgnn.{name}"

    # -- bookkeeping -------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def num_parameters(self) -> int:
        n = sum(t.size for t in self.params.values())
        if not self.directed:
            n -= self.params["edge_w"].size + self.params["edge_b"].size
        return n

    def parameters(self) -> List[Tuple[str, Tensor]]:
        return [(f"pgnn.{k}", v) for k, v in self.params.items()]

    def edge_index(self, source: int, target: int) -> int:
        return self.directed.index((source, target))

    def set_edge_kernel(self, source: int, target: int, kernel, bias: float = 0.0) -> None:
        """Overwrite one directed edge's kernel (``[km, km]`` for single-channel states)."""
        e = self.edge_index(source, target)
        C = self.hidden
        self.params["edge_w"].data[e * C:(e + 1) * C] = np.asarray(kernel).reshape(C, C, self.km, self.km)
        self.params["edge_b"].data[e * C:(e + 1) * C] = bias

    def set_node_gate(self, k: int, gate: NodeGate) -> None:
        C = self.hidden
        for n in GATE_KERNELS + GATE_BIASES:
            self.params[n].data[k * C:(k + 1) * C] = getattr(gate, n).data

    def node_gate(self, k: int) -> NodeGate:
        C = self.hidden
        return NodeGate(**{n: Tensor(self.params[n].data[k * C:(k + 1) * C]) for n in GATE_KERNELS + GATE_BIASES})

    def zero_(self) -> "PgnnModel":
        for t in self.params.values():
            t.data[...] = 0.0
        return self

    def _check_unary(self, unary: Tensor) -> None:
        if unary.ndim != 4:
            raise ShapeError(f"unary must be [B, K, H, W], got {unary.shape}")
        if unary.shape[1] != self.num_nodes:
            raise ShapeError(f"unary has {unary.shape[1]} channels but the graph has {self.num_nodes} nodes")


# ---------------------------------------------------------------------------
# node-level building blocks


def init_states(model: PgnnModel, unary: Tensor) -> List[Tensor]:
    """Per-node initial states ``h_k^0`` as ``[B, C, H, W]`` tensors."""
    model._check_unary(unary)
    h0 = _lift(model, unary)
    C = model.hidden
    return [ad.index_channels(h0, range(k * C, (k + 1) * C)) for k in range(model.num_nodes)]


def _edge_message(model: PgnnModel, e: int, h_src: Tensor) -> Tensor:
    C = model.hidden
    w = Tensor(model.params["edge_w"].data[e * C:(e + 1) * C])
    b = Tensor(model.params["edge_b"].data[e * C:(e + 1) * C])
    return ad.conv2d(h_src, w, b, padding=model.km // 2)


def aggregate(model: PgnnModel, k: int, states: Sequence[Tensor]) -> Tensor:
    """Sum of neighbour messages into node ``k`` (neighbours in ascending order)."""
    incoming = [(s, e) for e, (s, d) in enumerate(model.directed) if d == k]
    if model.mode == "mrf":
        if not incoming:
            return Tensor(np.ones(states[k].shape, model.dtype))
        msg = _edge_message(model, incoming[0][1], states[incoming[0][0]])
        for s, e in incoming[1:]:
            msg = ad.mul(msg, _edge_message(model, e, states[s]))
        return msg
    if not incoming:
        return Tensor(np.zeros(states[k].shape, model.dtype))
    msg = _edge_message(model, incoming[0][1], states[incoming[0][0]])
    for s, e in incoming[1:]:
        msg = ad.add(msg, _edge_message(model, e, states[s]))
    return msg


def gru_update(h: Tensor, x: Tensor, gate: NodeGate) -> Tensor:
    """Convolutional GRU step with same-padded kernels."""
    if h.shape != x.shape:
        raise ShapeError(f"gru_update: state {h.shape} and message {x.shape} differ")
    pad = gate.wz.shape[-1] // 2

    def conv(a, w, b=None):
        return ad.conv2d(a, w, b, padding=pad)

    z = ad.sigmoid(ad.add(conv(x, gate.wz, gate.bz), conv(h, gate.uz)))
    r = ad.sigmoid(ad.add(conv(x, gate.wr, gate.br), conv(h, gate.ur)))
    h_tilde = ad.tanh(ad.add(conv(x, gate.wh, gate.bh), conv(ad.mul(r, h), gate.uh)))
    ones = Tensor(np.ones(h.shape, h.dtype))
    return ad.add(ad.mul(ad.sub(ones, z), h), ad.mul(z, h_tilde))


def _mrf_update(x: Tensor, isolated: bool) -> Tensor:
    if isolated:
        B, C, H, W = x.shape
        return Tensor(np.full(x.shape, 1.0 / (H * W), x.dtype))
    if np.any(x.data.sum(axis=(2, 3)) == 0):
        raise DegenerateDistributionError("mrf update: message product is identically zero")
    return ad.normalize_maps(x)


# ---------------------------------------------------------------------------
# whole-graph propagation


def _lift(model: PgnnModel, unary: Tensor) -> Tensor:
    if model.hidden == 1:
        return unary
    return ad.conv2d(unary, model.params["lift_w"], model.params["lift_b"], groups=model.num_nodes)


def _project(model: PgnnModel, h: Tensor) -> Tensor:
    if model.hidden == 1:
        return h
    return ad.conv2d(h, model.params["proj_w"], model.params["proj_b"], groups=model.num_nodes)


def _output(model: PgnnModel, unary: Tensor, hT: Optional[Tensor]) -> Tensor:
    if hT is None:
        return ad.add(unary, unary) if model.literal_t0 else unary
    if model.mode == "mrf":
        return hT
    return ad.add(_project(model, hT), unary)


def _channel_index(nodes, C):
    return np.repeat(np.asarray(nodes, dtype=np.intp) * C, C) + np.tile(np.arange(C), len(nodes))


def propagate(model: PgnnModel, unary: Tensor) -> Tensor:
    """Run ``T`` simultaneous update steps on ``unary[B, K, H, W]``; differentiable."""
    model._check_unary(unary)
    if model.T == 0:
        return _output(model, unary, None)
    p = model.params
    K, C, E = model.num_nodes, model.hidden, len(model.directed)
    src_idx = _channel_index(model.src, C)
    dst_idx = _channel_index(model.dst, C)
    has_in = np.zeros(K, bool)
    has_in[model.dst] = True

    h0 = _lift(model, unary)
    h = h0
    for _ in range(model.T):
        if E:
            msgs = ad.conv2d(ad.index_channels(h, src_idx), p["edge_w"], p["edge_b"],
                             padding=model.km // 2, groups=E)
        if model.mode == "mrf":
            h = _mrf_step(model, h, msgs if E else None, has_in)
            continue
        if E:
            x = ad.scatter_channels(msgs, dst_idx, K * C)
        else:
            x = Tensor(np.zeros(h.shape, model.dtype))
        pad = model.kg // 2

        def conv(a, w, b=None):
            return ad.conv2d(a, p[w], p[b] if b else None, padding=pad, groups=K)

        z = ad.sigmoid(ad.add(conv(x, "wz", "bz"), conv(h, "uz")))
        r = ad.sigmoid(ad.add(conv(x, "wr", "br"), conv(h, "ur")))
        h_tilde = ad.tanh(ad.add(conv(x, "wh", "bh"), conv(ad.mul(r, h), "uh")))
        ones = Tensor(np.ones(h.shape, model.dtype))
        h = ad.add(ad.mul(ad.sub(ones, z), h), ad.mul(z, h_tilde))
    return _output(model, unary, h)


def _mrf_step(model: PgnnModel, h: Tensor, msgs: Optional[Tensor], has_in) -> Tensor:
    outs = []
    for k in range(model.num_nodes):
        edges = np.flatnonzero(model.dst == k)
        if len(edges) == 0:
            outs.append(_mrf_update(ad.index_channels(h, [k]), isolated=True))
            continue
        prod = ad.index_channels(msgs, [edges[0]])
        for e in edges[1:]:
            prod = ad.mul(prod, ad.index_channels(msgs, [e]))
        outs.append(_mrf_update(prod, isolated=False))
    return ad.concat(outs, axis=1)


def propagate_nodewise(model: PgnnModel, unary: Tensor, order: Optional[Sequence[int]] = None) -> Tensor:
    """Reference propagation visiting nodes one at a time in ``order``.

    Every node at step ``t`` reads only step ``t-1`` states, so the result must
    not depend on ``order``. Forward only; parameters are not recorded.
    """
    model._check_unary(unary)
    if model.T == 0:
        return _output(model, unary, None)
    K = model.num_nodes
    order = list(range(K)) if order is None else list(order)
    if sorted(order) != list(range(K)):
        raise ConfigError("order must be a permutation of the node ids")
    with ad.no_tape():
        states = init_states(model, Tensor(unary.data))
        for _ in range(model.T):
            new: List[Optional[Tensor]] = [None] * K
            for k in order:
                x = aggregate(model, k, states)
                if model.mode == "mrf":
                    isolated = not any(d == k for _, d in model.directed)
                    new[k] = _mrf_update(x, isolated)
                else:
                    new[k] = gru_update(states[k], x, model.node_gate(k))
            states = new
        hT = ad.concat(states, axis=1)
        return _output(model, Tensor(unary.data), hT)


def pgnn_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Squared error summed over pixels, averaged over joints (and batch for rank-4 input)."""
    if pred.shape != target.shape:
        raise ShapeError(f"pgnn_loss: prediction {pred.shape} vs target {target.shape}")
    if pred.ndim == 3:
        n = pred.shape[0]
    elif pred.ndim == 4:
        n = pred.shape[0] * pred.shape[1]
    else:
        raise ShapeError(f"pgnn_loss expects [K,H,W] or [B,K,H,W], got {pred.shape}")
    return ad.scale(ad.sum_sq_diff(pred, target), 1.0 / n)


# ---------------------------------------------------------------------------
# product-form marginal (direct evaluation, independent of the tensor engine)


def _correlate_same(q: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k = kernel.shape[0]
    pad = k // 2
    H, W = q.shape
    qp = np.pad(q, pad)
    out = np.zeros((H, W))
    for i in range(k):
        for j in range(k):
            out += kernel[i, j] * qp[i:i + H, j:j + W]
    return out


def mrf_marginal(
    graph: PoseGraph,
    unary: np.ndarray,
    kernels: Dict[Tuple[int, int], np.ndarray],
    biases: Dict[Tuple[int, int], float],
) -> np.ndarray:
    """Normalised product over neighbours ``v`` of ``(q_{r|v} * q_v + b_{v->r})``.

    ``kernels[(v, r)]`` is the conditional prior for message ``v -> r``. Nodes
    with no neighbours get the uniform map.
    """
    q = np.asarray(unary, dtype=np.float64)
    if q.ndim != 3 or q.shape[0] != graph.num_nodes:
        raise ShapeError(f"unary must be [K, H, W] with K={graph.num_nodes}, got {q.shape}")
    K, H, W = q.shape
    out = np.empty_like(q)
    for r in range(K):
        nbrs = graph.neighbors(r)
        if not nbrs:
            out[r] = 1.0 / (H * W)
            continue
        prod = np.ones((H, W))
        for v in nbrs:
            prod = prod * (_correlate_same(q[v], np.asarray(kernels[(v, r)], dtype=np.float64)) + biases.get((v, r), 0.0))
        z = prod.sum()
        if z == 0:
            raise DegenerateDistributionError(f"marginal of node {r} is identically zero")
        out[r] = prod / z
    return out
