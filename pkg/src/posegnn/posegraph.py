"""Undirected joint graphs: kinematic tree, loopy variant, custom edge lists."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Tuple

from .errors import GraphError
from .synthgen import Skeleton

KINDS = ("tree", "loopy", "custom")

Edge = Tuple[int, int]


def _norm(u: int, v: int) -> Edge:
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class PoseGraph:
    num_nodes: int
    edges: Tuple[Edge, ...]  # sorted, each (u, v) with u < v
    kind: str = "custom"

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[Edge], kind: str = "custom") -> "PoseGraph":
        return cls(num_nodes, tuple(sorted(_norm(int(u), int(v)) for u, v in edges)), kind)

    @property
    def edge_set(self) -> FrozenSet[Edge]:
        return frozenset(self.edges)

    def directed_edges(self) -> List[Edge]:
        """Every undirected edge in both directions as (source, target), sorted by (target, source)."""
        out = [(u, v) for u, v in self.edges] + [(v, u) for u, v in self.edges]
        return sorted(out, key=lambda e: (e[1], e[0]))

    def neighbors(self, k: int) -> List[int]:
        return sorted({v for u, v in self.edges if u == k} | {u for u, v in self.edges if v == k})

    def distances_from(self, source: int) -> List[float]:
        dist = [float("inf")] * self.num_nodes
        dist[source] = 0
        frontier = [source]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.neighbors(u):
                    if dist[v] == float("inf"):
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        return dist

    def num_components(self) -> int:
        seen, count = set(), 0
        for s in range(self.num_nodes):
            if s in seen:
                continue
            count += 1
            seen.update(i for i, d in enumerate(self.distances_from(s)) if d != float("inf"))
        return count

    def to_text(self) -> str:
        lines = [f"K {self.num_nodes} kind {self.kind}"]
        lines += [f"{u} {v}" for u, v in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PoseGraph":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows or len(rows[0]) != 4 or rows[0][0] != "K" or rows[0][2] != "kind":
            raise GraphError(["header must read 'K <int> kind <tree|loopy|custom>'"])
        try:
            num_nodes = int(rows[0][1])
            edges = [(int(r[0]), int(r[1])) for r in rows[1:]]
        except (ValueError, IndexError) as exc:
            raise GraphError([f"malformed graph text: {exc}"]) from None
        if any(len(r) != 2 for r in rows[1:]):
            raise GraphError(["each edge line must hold exactly two node ids"])
        # keep duplicates/self-loops visible to validate()
        return cls(num_nodes, tuple(edges), rows[0][3])

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def tree_preset(skeleton: Skeleton) -> PoseGraph:
    edges = [(j, p) for j, p in enumerate(skeleton.parent) if p >= 0]
    return PoseGraph.from_edges(skeleton.num_joints, edges, "tree")


def loopy_preset(skeleton: Skeleton) -> PoseGraph:
    """Tree plus shoulder-wrist, ankle-hip and shoulder-hip on both sides."""
    ix = skeleton.index
    extra = []
    for side in ("l_", "r_"):
        extra += [
            (ix(side + "shoulder"), ix(side + "wrist")),
            (ix(side + "ankle"), ix(side + "hip")),
            (ix(side + "shoulder"), ix(side + "hip")),
        ]
    base = tree_preset(skeleton)
    return PoseGraph.from_edges(skeleton.num_joints, list(base.edges) + extra, "loopy")


def preset(kind: str, skeleton: Skeleton) -> PoseGraph:
    if kind == "tree":
        return tree_preset(skeleton)
    if kind == "loopy":
        return loopy_preset(skeleton)
    raise GraphError([f"unknown graph preset {kind!r}"])


def validate(graph: PoseGraph, skeleton: Skeleton | None = None) -> List[str]:
    """Return every violated invariant (empty list means valid)."""
    problems = []
    K = graph.num_nodes
    if graph.kind not in KINDS:
        problems.append(f"unknown kind {graph.kind!r}")
    seen = set()
    for u, v in graph.edges:
        if u == v:
            problems.append(f"self-loop ({u},{v})")
        if not (0 <= u < K and 0 <= v < K):
            problems.append(f"edge ({u},{v}) has endpoint outside [0, {K})")
        key = _norm(u, v)
        if key in seen:
            problems.append(f"duplicate edge ({u},{v})")
        seen.add(key)
    if problems:
        return problems
    if graph.kind == "tree":
        if len(graph.edges) != K - 1:
            problems.append(f"tree must have {K - 1} edges, has {len(graph.edges)} (acyclicity)")
        comps = graph.num_components()
        if comps != 1:
            problems.append(f"tree is disconnected ({comps} components)")
    if graph.kind == "loopy" and skeleton is not None:
        for e in tree_preset(skeleton).edges:
            if e not in seen:
                problems.append(f"loopy graph missing tree edge {e}")
    return problems


def check(graph: PoseGraph, skeleton: Skeleton | None = None) -> PoseGraph:
    problems = validate(graph, skeleton)
    if problems:
        raise GraphError(problems)
    return graph
