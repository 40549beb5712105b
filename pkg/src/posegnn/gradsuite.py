"""Finite-difference checks over every tape op and a tiny end-to-end model."""

from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from . import autodiff as ad
from . import pgnn
from .autodiff import Tensor
from .gradcheck import GradcheckReport, gradcheck
from .network import NetConfig, PoseNet, deep_supervision_loss
from .posegraph import PoseGraph

Check = Tuple[str, Callable[[], GradcheckReport]]


def _rng(i):
    return np.random.default_rng(np.random.SeedSequence([2024, i]))


def _op_checks(eps, tol) -> List[Check]:
    def pair(seed, shape=(2, 3, 4)):
        r = _rng(seed)
        # keep clear of the relu kink so central differences stay valid
        a = r.normal(size=shape)
        a[np.abs(a) < 1e-2] += 0.1
        return Tensor(a), Tensor(r.normal(size=shape)), Tensor(r.normal(size=shape))

    def check(f, inputs):
        return lambda: gradcheck(f, inputs, eps=eps, tol=tol)

    a, b, w = pair(1)
    out: List[Check] = [
        ("add", check(lambda a, b: ad.sum(ad.mul(ad.add(a, b), w)), [a, b])),
        ("sub", check(lambda a, b: ad.sum(ad.mul(ad.sub(a, b), w)), [a, b])),
        ("mul", check(lambda a, b: ad.sum(ad.mul(ad.mul(a, b), w)), [a, b])),
        ("scale", check(lambda a: ad.sum(ad.mul(ad.scale(a, -1.7), w)), [a])),
        ("sigmoid", check(lambda a: ad.sum(ad.mul(ad.sigmoid(a), w)), [a])),
        ("tanh", check(lambda a: ad.sum(ad.mul(ad.tanh(a), w)), [a])),
        ("relu", check(lambda a: ad.sum(ad.mul(ad.relu(a), w)), [a])),
        ("elementwise add", check(lambda a, b: ad.sum(ad.mul(ad.elementwise(a, b, "add"), w)), [a, b])),
        ("elementwise mul", check(lambda a, b: ad.sum(ad.mul(ad.elementwise(a, b, "mul"), w)), [a, b])),
        ("unary scale", check(lambda a: ad.sum(ad.mul(ad.unary(a, "scale", 0.3), w)), [a])),
        ("sum", check(lambda a: ad.sum(a), [a])),
        ("sum_sq_diff", check(lambda a, b: ad.sum_sq_diff(a, b), [a, b])),
    ]

    r = _rng(2)
    pos = Tensor(r.uniform(0.5, 1.5, size=(2, 2, 3, 3)))
    wm = Tensor(r.normal(size=(2, 2, 3, 3)))
    out.append(("normalize_maps", check(lambda x: ad.sum(ad.mul(ad.normalize_maps(x), wm)), [pos])))

    x = Tensor(r.normal(size=(2, 3, 3, 3)))
    wg = Tensor(r.normal(size=(2, 5, 3, 3)))
    ws = Tensor(r.normal(size=(2, 4, 3, 3)))
    wc = Tensor(r.normal(size=(2, 6, 3, 3)))
    out += [
        ("index_channels", check(lambda x: ad.sum(ad.mul(ad.index_channels(x, [2, 0, 0, 1, 2]), wg)), [x])),
        ("scatter_channels", check(lambda x: ad.sum(ad.mul(ad.scatter_channels(x, [3, 1, 3], 4), ws)), [x])),
        ("concat", check(lambda x, y: ad.sum(ad.mul(ad.concat([x, y], axis=1), wc)), [x, Tensor(r.normal(size=(2, 3, 3, 3)))])),
    ]

    # conv2d: dense, strided, padded, dilated, grouped and depthwise variants
    for k, s, p, d, g, cin, cout in [
        (3, 1, 1, 1, 1, 2, 3),
        (3, 2, 0, 1, 1, 2, 2),
        (3, 1, 2, 2, 1, 2, 2),
        (1, 1, 0, 1, 1, 3, 2),
        (3, 1, 1, 1, 2, 4, 2),
        (3, 1, 1, 1, 3, 3, 3),
        (3, 2, 2, 2, 3, 3, 3),
    ]:
        rr = _rng(100 + k + 10 * s + 100 * p + 1000 * d + 10000 * g)
        xi = Tensor(rr.normal(size=(2, cin, 6, 6)))
        ki = Tensor(rr.normal(size=(cout, cin // g, k, k)))
        bi = Tensor(rr.normal(size=(cout,)))
        with ad.no_tape():
            shape = ad.conv2d(xi, ki, bi, s, p, d, g).shape
        tgt = Tensor(rr.normal(size=shape))
        f = (lambda s, p, d, g, tgt: lambda x, kk, bb: ad.sum_sq_diff(ad.conv2d(x, kk, bb, s, p, d, g), tgt))(s, p, d, g, tgt)
        out.append((f"conv2d k{k} s{s} p{p} d{d} g{g}", check(f, [xi, ki, bi])))
    return out


def tiny_model_check(eps: float = 1e-5, tol: float = 1e-4, seed: int = 0) -> GradcheckReport:
    """CPF + PGNN on a 2-stage backbone, 3-node graph and 8x8 heatmaps, every parameter checked."""
    graph = PoseGraph.from_edges(3, [(0, 1), (1, 2)], "tree")
    cfg = NetConfig(num_joints=3, map_size=(8, 8), stride=2, width=3, stages=2, cpf=True, T=2, km=3, kg=3)
    net = PoseNet(cfg, graph, seed=seed, dtype=np.float64)
    r = _rng(500 + seed)
    # non-zero biases so every gate path carries signal
    for n in pgnn.GATE_BIASES + ("edge_b",):
        net.pgnn.params[n].data[...] = r.normal(size=net.pgnn.params[n].shape) * 0.3
    for n, p in net.backbone.params.items():
        if n.endswith(".b"):
            p.data[...] = r.normal(size=p.shape) * 0.1
    images = Tensor(r.uniform(size=(1, 1, 16, 16)))
    target = Tensor(r.normal(size=(1, 3, 8, 8)))
    named = net.parameters()
    names = [n for n, _ in named]

    def f(*ps):
        originals = [p for _, p in named]
        _swap(net, names, ps)
        try:
            preds, final = net.forward(images)
            return deep_supervision_loss(preds, final, target)
        finally:
            _swap(net, names, originals)

    return gradcheck(f, [p for _, p in named], eps=eps, tol=tol, names=names)


def _swap(net: PoseNet, names, tensors) -> None:
    for n, t in zip(names, tensors):
        owner, key = n.split(".", 1)
        (net.backbone if owner == "backbone" else net.pgnn).params[key] = t


def run_suite(eps: float = 1e-5, tol: float = 1e-4, include_model: bool = True) -> List[Tuple[str, GradcheckReport]]:
    checks = _op_checks(eps, tol)
    if include_model:
        checks.append(("tiny CPF+PGNN model", lambda: tiny_model_check(eps, tol)))
    return [(name, fn()) for name, fn in checks]
