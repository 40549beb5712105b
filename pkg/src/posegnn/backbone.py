"""Toy multi-stage fully-convolutional backbone with cascade prediction fusion.

Stage ``i > 1`` receives the previous stage's features plus the previous
prediction lifted to feature width by a 1x1 convolution. Every stage emits a
prediction stack used for deep supervision; the last one is the PGNN unary.
"""

from __future__ import annotations

import math
from typing import Dict, List, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


class Backbone:
    def __init__(
        self,
        num_joints: int = 14,
        width: int = 32,
        stages: int = 3,
        stride: int = 2,
        cpf: bool = True,
        seed: int = 0,
        dtype=np.float64,
        lift_init: str = "zero",
    ):
        if lift_init not in ("uniform", "zero"):
            raise ConfigError(f"lift_init must be uniform or zero, got {lift_init!r}")
        if stages < 1:
            raise ConfigError(f"stages must be >= 1, got {stages}")
        if stride < 1 or stride & (stride - 1):
            raise ConfigError(f"stem stride must be a power of two, got {stride}")
        if width < 1 or num_joints < 1:
            raise ConfigError("width and num_joints must be positive")
        self.K, self.F, self.S, self.stride, self.cpf = num_joints, width, stages, stride, cpf
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = {}

        # lifts draw from their own stream so toggling fusion leaves the rest untouched;
        # with zero lift weights a fused net starts out equal to the unfused one
        main = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        lift_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

        n_stem = max(int(math.log2(stride)), 1)
        cin = 1
        for i in range(n_stem):
            self._conv(main, f"stem{i}", width, cin, 3, relu=True)
            cin = width
        for s in range(1, stages + 1):
            self._conv(main, f"s{s}.c1", width, width, 3, relu=True)
            self._conv(main, f"s{s}.c2", width, width, 3, relu=True)
            self._conv(main, f"s{s}.head", num_joints, width, 1, relu=False)
        if cpf:
            for s in range(2, stages + 1):
                self._conv(lift_rng, f"s{s}.lift", width, num_joints, 1, relu=False)
                if lift_init == "zero":
                    self.params[f"s{s}.lift.w"].data[...] = 0.0
        self.n_stem = n_stem

    def _conv(self, rng, name, cout, cin, k, relu):
        fan_in = cin * k * k
        bound = math.sqrt(6.0 / fan_in) if relu else 1.0 / math.sqrt(fan_in)
        self.params[name + ".w"] = Tensor(rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(self.dtype),
                                          requires_grad=True, name=name + ".w")
        self.params[name + ".b"] = Tensor(np.zeros(cout, self.dtype), requires_grad=True, name=name + ".b")

    def parameters(self) -> List[Tuple[str, Tensor]]:
        return [(f"backbone.{k}", v) for k, v in self.params.items()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def _apply(self, name, x, stride=1, relu=True):
        w = self.params[name + ".w"]
        y = ad.conv2d(x, w, self.params[name + ".b"], stride=stride, padding=w.shape[-1] // 2)
        return ad.relu(y) if relu else y

    def stem(self, images: Tensor) -> Tensor:
        if images.ndim != 4 or images.shape[1] != 1:
            raise ShapeError(f"images must be [B, 1, H, W], got {images.shape}")
        H, W = images.shape[2:]
        if H % self.stride or W % self.stride:
            raise ShapeError(f"image size {H}x{W} not divisible by stem stride {self.stride}")
        x = images
        s = 2 if self.stride > 1 else 1
        for i in range(self.n_stem):
            x = self._apply(f"stem{i}", x, stride=s)
        return x

    def stage(self, s: int, x: Tensor) -> Tuple[Tensor, Tensor]:
        f = self._apply(f"s{s}.c2", self._apply(f"s{s}.c1", x))
        return self._apply(f"s{s}.head", f, relu=False), f

    def forward(self, images: Tensor) -> Tuple[List[Tensor], Tensor]:
        """Return ``([pred_1, ..., pred_S], last_features)``."""
        feat = self.stem(images)
        preds = []
        x = feat
        for s in range(1, self.S + 1):
            if s > 1:
                x = feat
                if self.cpf:
                    x = ad.add(feat, self._apply(f"s{s}.lift", preds[-1], relu=False))
            pred, feat = self.stage(s, x)
            preds.append(pred)
        return preds, feat
