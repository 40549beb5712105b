"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .network import NetConfig
from .synthgen import AugmentConfig, Difficulty
from .training import Schedule


@dataclass
class RunConfig:
    # geometry
    map_size: int = 32
    stride: int = 2
    num_joints: int = 14
    sigma: float = 1.0
    # model
    stages: int = 3
    width: int = 32
    km: int = 3
    kg: int = 3
    T: int = 2
    graph: str = "tree"
    cpf: bool = True
    hidden: int = 1
    mode: str = "gru"
    literal_t0: bool = False
    lift_init: str = "zero"
    precision: str = "float64"
    # optimisation
    lr: float = 2.5e-3
    rho: float = 0.99
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 8
    lr_drop_frac: float = 0.8
    lr_drop_factor: float = 0.1
    augment: bool = True
    aug_scale_min: float = 0.75
    aug_scale_max: float = 1.25
    aug_rotation: float = 30.0
    aug_flip_prob: float = 0.5
    aug_gain_min: float = 0.7
    aug_gain_max: float = 1.3
    # data
    seed: int = 0
    data_seed: int = 1
    train_count: int = 2000
    val_count: int = 500
    angle_scale: float = 1.0
    occluder_prob: float = 0.3
    clutter_lines: int = 2
    noise_std: float = 0.06
    # ablation grid
    ablate_seeds: str = "0"
    ablate_T: str = "0,1,2,3"
    ablate_graphs: str = "tree,loopy"
    ablate_cpf: str = "off,on"

    def validate(self) -> "RunConfig":
        problems = []
        if self.map_size < 4:
            problems.append("map_size must be >= 4")
        if self.stride < 1 or self.stride & (self.stride - 1):
            problems.append("stride must be a power of two")
        if self.num_joints != 14:
            problems.append("num_joints must be 14 for the built-in skeleton")
        for name in ("sigma", "lr", "eps"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        for name in ("stages", "width", "batch_size", "hidden"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("km", "kg"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                problems.append(f"{name} must be odd and positive")
        if self.T < 0 or self.epochs < 0:
            problems.append("T and epochs must be >= 0")
        if self.graph not in ("tree", "loopy") and not Path(self.graph).is_file():
            problems.append(f"graph must be tree, loopy or an existing edge-list file, got {self.graph!r}")
        if self.lift_init not in ("zero", "uniform"):
            problems.append("lift_init must be zero or uniform")
        if self.mode not in ("gru", "mrf"):
            problems.append("mode must be gru or mrf")
        if self.precision not in ("float64", "float32"):
            problems.append("precision must be float64 or float32")
        if not 0 <= self.rho < 1:
            problems.append("rho must lie in [0, 1)")
        if not 0 <= self.lr_drop_frac <= 1:
            problems.append("lr_drop_frac must lie in [0, 1]")
        if not 0 <= self.aug_flip_prob <= 1:
            problems.append("aug_flip_prob must lie in [0, 1]")
        if self.aug_scale_min <= 0 or self.aug_scale_min > self.aug_scale_max:
            problems.append("augmentation scale range is invalid")
        if self.aug_gain_min < 0 or self.aug_gain_min > self.aug_gain_max:
            problems.append("augmentation gain range is invalid")
        if self.train_count < 1 or self.val_count < 0:
            problems.append("train_count must be >= 1 and val_count >= 0")
        try:
            self.grid_values()
        except ValueError as exc:
            problems.append(f"bad ablation grid: {exc}")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    # -- derived views -----------------------------------------------------

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def net_config(self) -> NetConfig:
        return NetConfig(
            num_joints=self.num_joints, map_size=(self.map_size, self.map_size), stride=self.stride,
            width=self.width, stages=self.stages, cpf=self.cpf, T=self.T, km=self.km, kg=self.kg,
            hidden=self.hidden, mode=self.mode, literal_t0=self.literal_t0,
            lift_init=self.lift_init,
        )

    def schedule(self) -> Schedule:
        aug = AugmentConfig(
            scale=(self.aug_scale_min, self.aug_scale_max),
            rotation=(-self.aug_rotation, self.aug_rotation),
            flip_prob=self.aug_flip_prob,
            gain=(self.aug_gain_min, self.aug_gain_max),
        )
        return Schedule(self.epochs, self.batch_size, self.lr, self.lr_drop_frac, self.lr_drop_factor,
                        self.rho, self.eps, self.augment, aug, self.sigma)

    def difficulty(self) -> Difficulty:
        return Difficulty(angle_scale=self.angle_scale, occluder_prob=self.occluder_prob,
                          clutter_lines=self.clutter_lines, noise_std=self.noise_std)

    def grid_values(self) -> Tuple[list, list, list, list]:
        seeds = [int(s) for s in self.ablate_seeds.split(",") if s.strip()]
        Ts = [int(t) for t in self.ablate_T.split(",") if t.strip()]
        graphs = [g.strip() for g in self.ablate_graphs.split(",") if g.strip()]
        cpf = [_parse_bool(c) for c in self.ablate_cpf.split(",") if c.strip()]
        if not seeds or not Ts or not graphs or not cpf:
            raise ValueError("every ablation axis needs at least one value")
        if any(g not in ("tree", "loopy") for g in graphs) or any(t < 0 for t in Ts):
            raise ValueError("graphs must be tree/loopy and T >= 0")
        return cpf, Ts, graphs, seeds

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "on" if v else "off"
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"


def _parse_bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("on", "true", "yes", "1"):
        return True
    if s in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, value: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    try:
        if kind == "bool":
            return _parse_bool(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return str(value).strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_text(text: str) -> Dict[str, object]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def load(path: Optional[str] = None, overrides: Optional[Dict[str, object]] = None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (already typed or strings)."""
    values: Dict[str, object] = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_text(p.read_text()))
    for k, v in (overrides or {}).items():
        values[k] = coerce(k, v) if isinstance(v, str) else v
    unknown = set(values) - set(_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return dataclasses.replace(RunConfig(), **values).validate()
