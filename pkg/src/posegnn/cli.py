"""``posegnn`` command line: gen, train, eval, ablate, gradcheck, dump-heatmaps.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import config as cfgmod
from .errors import NumericError, PoseGnnError, ValidationError
from .metrics import format_rows
from .network import PoseNet, read_checkpoint, write_checkpoint
from .posegraph import PoseGraph, check, preset
from .synthgen import SampleBatch, generate, lsp_skeleton, read_dataset, stack_samples, write_dataset
from .training import Cell, ablate, evaluate, format_curve, predict, train

log = logging.getLogger("posegnn")


# ---------------------------------------------------------------------------
# config plumbing


def _overrides(args) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    # dedicated flags win over --set and the config file
    for flag, key in (("seed", "seed"), ("T", "T"), ("graph", "graph"), ("cpf", "cpf"), ("epochs", "epochs")):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = str(v)
    return out


def load_config(args) -> cfgmod.RunConfig:
    return cfgmod.load(getattr(args, "config", None), _overrides(args))


def _graph(rc: cfgmod.RunConfig) -> PoseGraph:
    skel = lsp_skeleton()
    if rc.graph in ("tree", "loopy"):
        return preset(rc.graph, skel)
    return check(PoseGraph.from_text(Path(rc.graph).read_text()), skel)


def _dataset(path: Optional[str], rc: cfgmod.RunConfig, count: int, seed: int) -> SampleBatch:
    if path:
        samples = read_dataset(path)
        if not samples:
            raise ValidationError(f"{path}: dataset is empty")
    else:
        samples = generate(count, seed, lsp_skeleton(), rc.difficulty(), (rc.map_size, rc.map_size),
                           rc.stride, rc.sigma)
    return stack_samples(samples, rc.dtype)


def _param_report(net: PoseNet) -> Dict[str, float]:
    c = net.param_counts()
    return {"params_backbone": c["backbone"], "params_pgnn": c["pgnn"], "params_ratio": c["ratio"]}


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _plots_enabled(args) -> bool:
    return not getattr(args, "no_plots", False)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    rc = load_config(args)
    count = args.count if args.count is not None else rc.train_count
    seed = args.seed if args.seed is not None else rc.data_seed
    if count < 1:
        raise ValidationError("--count must be >= 1")
    samples = generate(count, seed, lsp_skeleton(), rc.difficulty(), (rc.map_size, rc.map_size), rc.stride, rc.sigma)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, out)
    print(f"wrote {count} samples to {out}")
    return 0


def cmd_train(args) -> int:
    rc = load_config(args)
    graph = _graph(rc)
    train_set = _dataset(args.train, rc, rc.train_count, rc.data_seed)
    val_set = _dataset(args.val, rc, rc.val_count, rc.data_seed + 1) if (args.val or rc.val_count) else None
    net = PoseNet(rc.net_config(), graph, seed=rc.seed, dtype=rc.dtype)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.txt", rc.to_text())

    params = _param_report(net)
    print(f"parameters: backbone {params['params_backbone']}, pgnn {params['params_pgnn']}, "
          f"pgnn/backbone = {100 * params['params_ratio']:.2f}%")
    res = train(net, train_set, val_set, rc.schedule(), rc.seed, progress=print)
    write_checkpoint(net, out / "model.ckpt")
    _write(out / "loss_curve.csv", format_curve(res.curve))
    _write(out / "params.csv", "name,value\n" + "".join(f"{k},{v:.6f}\n" for k, v in params.items()))
    tag = Cell(rc.cpf, rc.T, rc.graph, rc.seed).tag
    if res.report is not None:
        res.report.meta.update(Cell(rc.cpf, rc.T, rc.graph, rc.seed).meta())
        _write(out / "metrics.csv", format_rows(res.report.rows(tag, params)))
        print(f"val mean PCKh {res.report.mean_pckh:.4f}, mean PCK {res.report.mean_pck:.4f}")
    if _plots_enabled(args):
        from . import plots
        plots.loss_curve(res.curve, out / "loss_curve.png")
        if res.report is not None:
            plots.joint_bars(res.report.joint_names, res.report.pckh, res.report.pck, out / "per_joint.png")
            plots.stage_accuracy(res.report.stage_pckh, out / "stages.png", tag)
    return 0


def cmd_eval(args) -> int:
    rc = load_config(args)
    net = read_checkpoint(args.checkpoint, rc.dtype)
    data = _dataset(args.data, rc, rc.val_count, rc.data_seed + 1)
    c = net.cfg
    meta = {"cpf": "on" if c.cpf else "off", "graph": net.graph.kind, "T": str(c.T), "seed": ""}
    rep = evaluate(net, data, meta=meta)
    out = Path(args.out)
    tag = Path(args.checkpoint).stem
    _write(out / "metrics.csv", format_rows(rep.rows(tag, _param_report(net))))
    print(f"mean PCKh {rep.mean_pckh:.4f}, mean PCK {rep.mean_pck:.4f}")
    if _plots_enabled(args):
        from . import plots
        plots.joint_bars(rep.joint_names, rep.pckh, rep.pck, out / "per_joint.png")
        plots.stage_accuracy(rep.stage_pckh, out / "stages.png", tag)
    return 0


GRID_COLUMNS = ("tag", "cpf", "graph", "T", "seed", "mean_pckh", "mean_pck")


def grid_csv(results) -> str:
    stages = max(len(r.report.stage_pckh) for _, _, r in results) - 1
    head = list(GRID_COLUMNS) + [f"pckh_stage{i}" for i in range(1, stages + 1)] + [
        "pckh_final", "params_backbone", "params_pgnn"]
    lines = [",".join(head)]
    for cell, net, res in results:
        rep = res.report
        c = net.param_counts()
        vals = [f"{v:.6f}" for v in [rep.mean_pckh, rep.mean_pck] + list(rep.stage_pckh)]
        lines.append(",".join([cell.tag, "on" if cell.cpf else "off", cell.graph, str(cell.T), str(cell.seed)]
                              + vals + [str(c["backbone"]), str(c["pgnn"])]))
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    rc = load_config(args)
    cpfs, Ts, graphs, seeds = rc.grid_values()
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    cells = [Cell(c, T, g, s) for s in seeds for c in cpfs for g in graphs for T in Ts]
    # T = 0 has no graph; keep one of those cells per (cpf, seed)
    seen, uniq = set(), []
    for cell in cells:
        key = (cell.cpf, cell.seed, "-" if cell.T == 0 else cell.graph, cell.T)
        if key not in seen or not args.dedupe_t0:
            seen.add(key)
            uniq.append(cell)
    train_set = _dataset(args.train, rc, rc.train_count, rc.data_seed)
    val_set = _dataset(args.val, rc, rc.val_count, rc.data_seed + 1)
    results = ablate(uniq, rc.net_config(), train_set, val_set, rc.schedule(), rc.dtype, progress=print)
    out = Path(args.out)
    _write(out / "grid.csv", grid_csv(results))
    rows = []
    for cell, net, res in results:
        rows.extend(res.report.rows(cell.tag, _param_report(net)))
    _write(out / "metrics.csv", format_rows(rows))
    if _plots_enabled(args):
        from . import plots
        med: Dict[str, List[float]] = defaultdict(list)
        tcurve: Dict[str, Dict[int, List[float]]] = defaultdict(lambda: defaultdict(list))
        for cell, _, res in results:
            label = f"cpf {'on' if cell.cpf else 'off'}, " + ("no PGNN" if cell.T == 0 else f"{cell.graph} T={cell.T}")
            med[label].append(res.report.mean_pckh)
            if cell.cpf:
                tcurve[cell.graph][cell.T].append(res.report.mean_pckh)
        plots.ablation_bars({k: float(np.median(v)) for k, v in med.items()}, out / "ablation.png")
        if tcurve:
            plots.t_curve({g: [(T, float(np.median(v))) for T, v in d.items()] for g, d in tcurve.items()},
                          out / "t_curve.png")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite
    results = run_suite(eps=args.eps, tol=args.tol)
    ok = True
    for name, rep in results:
        print(f"{name:28s} {rep}")
        ok &= rep.passed
    print("gradcheck:", "all checks passed" if ok else "FAILURES")
    return 0 if ok else 2


def write_pgm(path: Path, m: np.ndarray) -> tuple:
    """8-bit binary PGM, min-max scaled; returns ``(lo, hi)``."""
    lo, hi = float(m.min()), float(m.max())
    span = hi - lo
    scaled = np.zeros(m.shape) if span == 0 else (m - lo) / span
    pix = np.clip(np.floor(scaled * 255 + 0.5), 0, 255).astype(np.uint8)
    path.write_bytes(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode() + pix.tobytes())
    return lo, hi


def cmd_dump(args) -> int:
    rc = load_config(args)
    data = _dataset(args.data, rc, max(args.index + 1, 1), rc.data_seed + 1)
    if not 0 <= args.index < len(data):
        raise ValidationError(f"--index {args.index} out of range for {len(data)} samples")
    if args.checkpoint:
        net = read_checkpoint(args.checkpoint, rc.dtype)
        _, final = predict(net, data.images[args.index:args.index + 1])
        maps, source = final[0], "prediction"
    else:
        maps, source = data.heatmaps[args.index], "ground truth"
    names = lsp_skeleton().joint_names if len(maps) == 14 else [f"j{k}" for k in range(len(maps))]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# {source} heatmaps, sample {args.index}; pixel = round(255 * (value - min) / (max - min))",
             "joint,file,min,max"]
    for k, (name, m) in enumerate(zip(names, maps)):
        fname = f"{k:02d}_{name}.pgm"
        lo, hi = write_pgm(out / fname, np.asarray(m, dtype=np.float64))
        lines.append(f"{name},{fname},{lo:.9g},{hi:.9g}")
    _write(out / "scales.txt", "\n".join(lines) + "\n")
    print(f"wrote {len(maps)} maps to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors: exit 1 rather than argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"error[UsageError]: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="posegnn", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model_flags=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="cap BLAS worker threads")
        if model_flags:
            sp.add_argument("--T", type=int)
            sp.add_argument("--graph", help="tree, loopy or an edge-list file")
            sp.add_argument("--cpf", choices=("on", "off"))
            sp.add_argument("--epochs", type=int)
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    sp = sub.add_parser("gen", help="write a synthetic dataset file")
    common(sp, model_flags=False)
    sp.add_argument("--count", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train one model; writes checkpoint, CSVs and figures")
    common(sp)
    sp.add_argument("--train", help="training dataset file (generated from config if omitted)")
    sp.add_argument("--val", help="validation dataset file (generated from config if omitted)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp, model_flags=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", help="dataset file (generated from config if omitted)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train the CPF x T x graph grid")
    common(sp)
    sp.add_argument("--seeds", help="comma-separated seeds (overrides ablate_seeds)")
    sp.add_argument("--dedupe-t0", action="store_true", help="train T=0 once instead of once per graph kind")
    sp.add_argument("--train")
    sp.add_argument("--val")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every op and a tiny model")
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("dump-heatmaps", help="write per-joint maps as PGM images")
    common(sp, model_flags=False)
    sp.add_argument("--checkpoint", help="dump predictions instead of ground truth")
    sp.add_argument("--data")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_dump)
    return p


def _thread_limit(n: Optional[int]):
    if not n:
        return contextlib.nullcontext()
    if n < 1:
        raise ValidationError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(getattr(args, "threads", None)):
            return args.func(args)
    except ValidationError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except (NumericError, PoseGnnError, FloatingPointError) as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
