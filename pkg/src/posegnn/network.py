"""Backbone + PGNN bundle, deep-supervision loss and checkpoint files."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Backbone
from .errors import FormatError, ShapeError
from .pgnn import PgnnModel, pgnn_loss, propagate
from .posegraph import PoseGraph


@dataclass
class NetConfig:
    num_joints: int = 14
    map_size: Tuple[int, int] = (32, 32)
    stride: int = 2
    width: int = 32
    stages: int = 3
    cpf: bool = True
    T: int = 2
    km: int = 3
    kg: int = 3
    hidden: int = 1
    mode: str = "gru"
    literal_t0: bool = False
    lift_init: str = "zero"


class PoseNet:
    def __init__(self, cfg: NetConfig, graph: PoseGraph, seed: int = 0, dtype=np.float64):
        if graph.num_nodes != cfg.num_joints:
            raise ShapeError(f"graph has {graph.num_nodes} nodes, config has {cfg.num_joints} joints")
        self.cfg = cfg
        self.graph = graph
        self.dtype = np.dtype(dtype)
        self.backbone = Backbone(cfg.num_joints, cfg.width, cfg.stages, cfg.stride, cfg.cpf,
                                 seed=int(np.random.SeedSequence([seed, 10]).generate_state(1)[0]), dtype=dtype,
                                 lift_init=cfg.lift_init)
        self.pgnn: Optional[PgnnModel] = None
        if cfg.T > 0 or cfg.literal_t0:
            self.pgnn = PgnnModel(graph, cfg.T, cfg.mode, cfg.km, cfg.kg, cfg.hidden,
                                  seed=int(np.random.SeedSequence([seed, 20]).generate_state(1)[0]),
                                  dtype=dtype, literal_t0=cfg.literal_t0)

    def parameters(self) -> List[Tuple[str, Tensor]]:
        ps = self.backbone.parameters()
        if self.pgnn is not None and self.cfg.T > 0:
            ps += self.pgnn.parameters()
        return ps

    def param_counts(self) -> Dict[str, float]:
        bb = self.backbone.num_parameters()
        pg = self.pgnn.num_parameters() if self.pgnn is not None and self.cfg.T > 0 else 0
        return {"backbone": bb, "pgnn": pg, "ratio": pg / bb}

    def forward(self, images: Tensor) -> Tuple[List[Tensor], Tensor]:
        preds, _ = self.backbone.forward(images)
        final = preds[-1] if self.pgnn is None else propagate(self.pgnn, preds[-1])
        return preds, final

    def state_arrays(self) -> Dict[str, Dict[str, np.ndarray]]:
        out = {"BKBN": {k: v.data for k, v in self.backbone.params.items()}}
        if self.pgnn is not None:
            out["PGNN"] = {k: v.data for k, v in self.pgnn.params.items()}
        return out


def deep_supervision_loss(preds: List[Tensor], final: Tensor, gt: Tensor) -> Tensor:
    """Equal-weight sum of the per-stage losses and the refined-output loss."""
    total = pgnn_loss(final, gt)
    for p in preds:
        total = ad.add(total, pgnn_loss(p, gt))
    return total


# ---------------------------------------------------------------------------
# checkpoint: magic, version, header length, key=value header, tagged sections

CKPT_MAGIC = b"PGNC"
CKPT_VERSION = 1


def _header(net: PoseNet) -> Dict[str, str]:
    c = net.cfg
    return {
        "graph_hash": net.graph.digest(),
        "K": str(c.num_joints), "H": str(c.map_size[0]), "W": str(c.map_size[1]),
        "km": str(c.km), "kg": str(c.kg), "T": str(c.T), "mode": c.mode,
        "stride": str(c.stride), "width": str(c.width), "stages": str(c.stages),
        "cpf": "on" if c.cpf else "off", "hidden": str(c.hidden),
        "literal_t0": "on" if c.literal_t0 else "off",
        "graph": net.graph.to_text().replace("\n", ";"),
    }


def write_checkpoint(net: PoseNet, path) -> None:
    head = "\n".join(f"{k}={v}" for k, v in _header(net).items()).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(head)) + head)
        for tag, arrays in net.state_arrays().items():
            fh.write(tag.encode() + struct.pack("<I", len(arrays)))
            for name, a in arrays.items():
                nb = name.encode()
                fh.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim))
                fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
                fh.write(np.asarray(a, dtype="<f4").tobytes())


def read_checkpoint_header(path) -> Dict[str, str]:
    with open(path, "rb") as fh:
        raw = fh.read(12)
        if len(raw) < 12 or raw[:4] != CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint (bad magic)")
        version, n = struct.unpack("<II", raw[4:])
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        head = fh.read(n).decode()
    return dict(line.split("=", 1) for line in head.splitlines())


def read_checkpoint(path, dtype=np.float64) -> PoseNet:
    raw = open(path, "rb").read()
    hdr = read_checkpoint_header(path)
    off = 12 + struct.unpack("<I", raw[8:12])[0]
    graph = PoseGraph.from_text(hdr["graph"].replace(";", "\n"))
    if graph.digest() != hdr["graph_hash"]:
        raise FormatError(f"{path}: graph hash mismatch")
    cfg = NetConfig(
        num_joints=int(hdr["K"]), map_size=(int(hdr["H"]), int(hdr["W"])), stride=int(hdr["stride"]),
        width=int(hdr["width"]), stages=int(hdr["stages"]), cpf=hdr["cpf"] == "on", T=int(hdr["T"]),
        km=int(hdr["km"]), kg=int(hdr["kg"]), hidden=int(hdr["hidden"]), mode=hdr["mode"],
        literal_t0=hdr.get("literal_t0") == "on",
    )
    net = PoseNet(cfg, graph, dtype=dtype)
    targets = {"BKBN": net.backbone.params, "PGNN": net.pgnn.params if net.pgnn is not None else {}}
    try:
        while off < len(raw):
            tag = raw[off:off + 4].decode()
            (count,) = struct.unpack_from("<I", raw, off + 4)
            off += 8
            if tag not in targets:
                raise FormatError(f"{path}: unknown section {tag!r}")
            for _ in range(count):
                (ln,) = struct.unpack_from("<H", raw, off)
                name = raw[off + 2:off + 2 + ln].decode()
                off += 2 + ln
                (nd,) = struct.unpack_from("<B", raw, off)
                shape = struct.unpack_from(f"<{nd}I", raw, off + 1)
                off += 1 + 4 * nd
                size = int(np.prod(shape)) if nd else 1
                if off + 4 * size > len(raw):
                    raise FormatError(f"{path}: truncated checkpoint in {name}")
                arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
                off += 4 * size
                dest = targets[tag].get(name)
                if dest is None or dest.shape != arr.shape:
                    raise FormatError(f"{path}: parameter {name} missing or misshapen")
                dest.data[...] = arr
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint ({exc})") from None
    return net
