"""Compile a bond matrix into the dual message-passing graph.

One node per physical variable (after merging the common effort of each 0-junction
and the common flow of each 1-junction), edges carrying physics-initialized
frequency operators, plus the reversed edge of every causal relation.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .bondmatrix import BondMatrix
from .spectral import FreqOperator, OperatorKind, make_operator


class Origin(str, Enum):
    ELEMENT = "element"
    TFGY = "tfgy"
    JUNCTION_BALANCE = "junction-balance"
    REVERSED_ELEMENT = "reversed-element"
    REVERSED_TFGY = "reversed-tfgy"
    REVERSED_JUNCTION = "reversed-junction"

    @property
    def reversed(self) -> "Origin":
        return _REVERSE[self]

    @property
    def is_causal(self) -> bool:
        return self in (Origin.ELEMENT, Origin.TFGY, Origin.JUNCTION_BALANCE)


_REVERSE = {
    Origin.ELEMENT: Origin.REVERSED_ELEMENT,
    Origin.TFGY: Origin.REVERSED_TFGY,
    Origin.JUNCTION_BALANCE: Origin.REVERSED_JUNCTION,
}


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeInit:
    """Initial operator ``sign * alpha * kind``."""

    kind: OperatorKind
    alpha: float
    sign: int = 1

    @property
    def scale(self) -> float:
        return self.sign * self.alpha

    def operator(self, n_time: int, fs: float = 1.0) -> FreqOperator:
        return make_operator(self.kind, self.scale, n_time, fs)

    def inverse(self) -> "EdgeInit":
        kind = {
            OperatorKind.INTEGRATE: OperatorKind.DERIVE,
            OperatorKind.DERIVE: OperatorKind.INTEGRATE,
        }.get(self.kind, self.kind)
        return EdgeInit(kind, 1.0 / self.alpha, self.sign)

    def __str__(self) -> str:
        s = "-" if self.sign < 0 else "+"
        return f"{s}{self.alpha:g}·{self.kind.value}"


@dataclass(frozen=True)
class VarNode:
    id: int
    var: str
    bonds: tuple[int, ...]
    observed: bool = False
    channel: int | None = None

    @property
    def labels(self) -> tuple[tuple[int, str], ...]:
        return tuple((b, self.var) for b in self.bonds)

    @property
    def name(self) -> str:
        return self.var + "_".join(map(str, self.bonds))

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class PhysEdge:
    src: int
    dst: int
    init: EdgeInit
    origin: Origin
    bonds: tuple[int, ...] = ()


@dataclass(frozen=True)
class DualGraph:
    nodes: tuple[VarNode, ...]
    edges: tuple[PhysEdge, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node_of(self, bond: int, var: str) -> VarNode:
        for n in self.nodes:
            if n.var == var and bond in n.bonds:
                return n
        raise KeyError(f"no node for {var}{bond}")

    def by_name(self, name: str) -> VarNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def in_edges(self, node: int) -> list[PhysEdge]:
        return [e for e in self.edges if e.dst == node]

    def in_neighbors(self, node: int) -> list[int]:
        return sorted({e.src for e in self.edges if e.dst == node})

    @property
    def observed(self) -> list[VarNode]:
        """Observed nodes ordered by channel index."""
        return sorted((n for n in self.nodes if n.observed), key=lambda n: n.channel)

    def pairs(self) -> list[tuple[int, int]]:
        """Distinct ordered ``(src, dst)`` pairs carrying at least one edge."""
        return sorted({(e.src, e.dst) for e in self.edges})

    def pair_operator(self, src: int, dst: int, n_time: int, fs: float = 1.0) -> np.ndarray:
        """Sum of the initial operator diagonals of all edges from ``src`` to ``dst``."""
        diag = np.zeros(n_time // 2 + 1, dtype=complex)
        for e in self.edges:
            if e.src == src and e.dst == dst:
                diag = diag + e.init.operator(n_time, fs).diagonal
        return diag

    def is_weakly_connected(self) -> bool:
        if not self.nodes:
            return False
        adj = {n.id: set() for n in self.nodes}
        for e in self.edges:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        seen, stack = {0}, [0]
        while stack:
            for m in adj[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return len(seen) == len(self.nodes)

    def permuted(self, perm: Iterable[int]) -> "DualGraph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = list(perm)
        new_of = {old: new for new, old in enumerate(perm)}
        nodes = tuple(
            VarNode(new, self.nodes[old].var, self.nodes[old].bonds, self.nodes[old].observed, self.nodes[old].channel)
            for new, old in enumerate(perm)
        )
        edges = tuple(PhysEdge(new_of[e.src], new_of[e.dst], e.init, e.origin, e.bonds) for e in self.edges)
        return DualGraph(nodes, edges)

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n.id, "name": n.name, "labels": [f"{v}{b}" for b, v in n.labels],
                 "observed": n.observed, "channel": n.channel}
                for n in self.nodes
            ],
            "edges": [
                {"src": e.src, "dst": e.dst, "origin": e.origin.value, "kind": e.init.kind.value,
                 "alpha": e.init.alpha, "sign": e.init.sign, "bonds": list(e.bonds)}
                for e in self.edges
            ],
        }

    def dumps(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DualGraph":
        nodes = []
        for n in d["nodes"]:
            labels = [(int(s[1:]), s[0]) for s in n["labels"]]
            nodes.append(VarNode(int(n["id"]), labels[0][1], tuple(b for b, _ in labels),
                                 bool(n["observed"]), n["channel"]))
        edges = [
            PhysEdge(int(e["src"]), int(e["dst"]), EdgeInit(OperatorKind(e["kind"]), float(e["alpha"]), int(e["sign"])),
                     Origin(e["origin"]), tuple(e.get("bonds", ())))
            for e in d["edges"]
        ]
        return cls(tuple(nodes), tuple(edges))

    @classmethod
    def loads(cls, text: str) -> "DualGraph":
        return cls.from_dict(json.loads(text))


# ----------------------------------------------------------------------- mapping

_MAP_RE = re.compile(r"^(?:ch)?(\d+)=([ef])(\d+)$")


def parse_mapping(items: Iterable[str]) -> dict[int, tuple[int, str]]:
    """Parse ``ch0=e1``-style items into ``{channel: (bond, var)}``."""
    out: dict[int, tuple[int, str]] = {}
    for item in items:
        m = _MAP_RE.match(item.strip())
        if not m:
            raise CompileError(f"bad mapping item {item!r}, expected like ch0=e1")
        ch = int(m.group(1))
        if ch in out:
            raise CompileError(f"channel {ch} mapped twice")
        out[ch] = (int(m.group(3)), m.group(2))
    return out


# ----------------------------------------------------------------------- compile

class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _element_edges(bond: int, col: str, alpha: float, imposed: str):
    """Causal edge of a one-port element; ``imposed`` is what the bond imposes on its junction."""
    e, f = (bond, "e"), (bond, "f")
    effort_out = imposed == "e"
    ident, integ, deriv = OperatorKind.SCALAR, OperatorKind.INTEGRATE, OperatorKind.DERIVE
    if col == "R":
        return (f, e, EdgeInit(ident, alpha)) if effort_out else (e, f, EdgeInit(ident, 1 / alpha))
    if col == "I":
        return (f, e, EdgeInit(deriv, alpha)) if effort_out else (e, f, EdgeInit(integ, 1 / alpha))
    # C
    return (f, e, EdgeInit(integ, 1 / alpha)) if effort_out else (e, f, EdgeInit(deriv, alpha))


def _two_port_edges(kind: str, i: int, j: int, alpha: float, imposed_i: str, imposed_j: str):
    ident = OperatorKind.SCALAR
    ei, fi, ej, fj = (i, "e"), (i, "f"), (j, "e"), (j, "f")
    fwd, inv = EdgeInit(ident, alpha), EdgeInit(ident, 1 / alpha)
    if kind == "GY":
        if imposed_i != imposed_j:
            raise CompileError(f"gyrator on bonds {i},{j} has inconsistent causality")
        if imposed_i == "f":  # gyrator outputs both efforts
            return [(fj, ei, fwd), (fi, ej, fwd)]
        return [(ei, fj, inv), (ej, fi, inv)]
    if imposed_i == imposed_j:
        raise CompileError(f"transformer on bonds {i},{j} has inconsistent causality")
    if imposed_j == "e":  # effort enters on port j
        return [(ej, ei, fwd), (fi, fj, fwd)]
    return [(ei, ej, inv), (fj, fi, inv)]


def compile_dual_graph(bm: BondMatrix, mapping: Mapping[int, tuple[int, str]] | None = None) -> DualGraph:
    """Run the seven compilation steps on a bond matrix.

    ``mapping`` sends input channels to ``(bond, 'e'|'f')`` variables.
    """
    mapping = dict(mapping or {})
    bonds = sorted(bm.rows)

    # (1) one variable per bond effort and flow
    variables = [(b, v) for b in bonds for v in ("e", "f")]

    junctions: dict[tuple[str, int], list[tuple[int, object]]] = {}
    causal: list[tuple[tuple, tuple, EdgeInit, Origin, tuple[int, ...]]] = []
    for b in bonds:
        row = bm.rows[b]
        for col in ("TF", "GY", "0", "1"):
            t = row.get(col)
            if t is not None:
                junctions.setdefault((col, abs(t.signed_id)), []).append((b, t))

    # (2) one-port element edges, directed by causality
    for b in bonds:
        row = bm.rows[b]
        for col in ("R", "I", "C"):
            if row.get(col) is None:
                continue
            (t,) = [row[c] for c in ("TF", "GY", "0", "1") if row.get(c) is not None]
            src, dst, init = _element_edges(b, col, float(row[col]), t.imposed)
            causal.append((src, dst, init, Origin.ELEMENT, (b,)))

    # (3) two-port junction edges
    for (col, jid), rows in sorted(junctions.items()):
        if col not in ("TF", "GY"):
            continue
        if len(rows) != 2:
            raise CompileError(f"{col}{jid} must join exactly two bonds, found {len(rows)}")
        (i, ti), (j, tj) = sorted(rows, key=lambda r: r[0])
        for src, dst, init in _two_port_edges(col, i, j, float(ti.coeff), ti.imposed, tj.imposed):
            causal.append((src, dst, init, Origin.TFGY, (i, j)))

    # (4) 0/1-junction balance edges toward the strong bond's variable
    uf = _UnionFind(variables)
    for (col, jid), rows in sorted(junctions.items()):
        if col not in ("0", "1"):
            continue
        balanced, common, strong_imposes = ("e", "f", "f") if col == "1" else ("f", "e", "e")
        strong = [b for b, t in rows if t.imposed == strong_imposes]
        if len(strong) != 1:
            raise CompileError(f"{col}-junction {jid} has {len(strong)} strong bonds")
        s = strong[0]
        sign = {b: (1 if t.signed_id > 0 else -1) for b, t in rows}
        for b, _ in rows:
            if b == s:
                continue
            causal.append(((b, balanced), (s, balanced),
                           EdgeInit(OperatorKind.IDENTITY, 1.0, -sign[b] * sign[s]),
                           Origin.JUNCTION_BALANCE, (b, s)))
        # (5) merge the junction's common variable
        for b, _ in rows[1:]:
            uf.union((rows[0][0], common), (b, common))

    # (6) relax causality with the reversed edge of every relation
    all_edges = list(causal)
    for src, dst, init, origin, bs in causal:
        if origin == Origin.JUNCTION_BALANCE:
            rev = EdgeInit(OperatorKind.IDENTITY, 1.0, init.sign)
        else:
            rev = init.inverse()
        all_edges.append((dst, src, rev, origin.reversed, bs))

    classes: dict[tuple, list[tuple[int, str]]] = {}
    for v in variables:
        classes.setdefault(uf.find(v), []).append(v)
    ordered = sorted(classes.values(), key=lambda vs: (min(b for b, _ in vs), vs[0][1]))
    node_of_var = {}
    for k, vs in enumerate(ordered):
        for v in vs:
            node_of_var[v] = k

    # (7) observed channels; remaining nodes are completed with zero features
    channel_of_node: dict[int, int] = {}
    for ch, (b, v) in sorted(mapping.items()):
        if (b, v) not in node_of_var:
            raise CompileError(f"channel {ch} maps to nonexistent variable {v}{b}")
        k = node_of_var[(b, v)]
        if k in channel_of_node:
            raise CompileError(f"channels {channel_of_node[k]} and {ch} land on the same node")
        channel_of_node[k] = ch

    nodes = tuple(
        VarNode(k, vs[0][1], tuple(sorted(b for b, _ in vs)), k in channel_of_node, channel_of_node.get(k))
        for k, vs in enumerate(ordered)
    )
    edges = []
    seen = set()
    for src, dst, init, origin, bs in all_edges:
        a, b = node_of_var[src], node_of_var[dst]
        if a == b:
            continue
        key = (a, b, origin)
        if key in seen:
            raise CompileError(f"duplicate {origin.value} edge {nodes[a]} -> {nodes[b]}")
        seen.add(key)
        edges.append(PhysEdge(a, b, init, origin, bs))
    return DualGraph(nodes, tuple(edges))


def message_stencil(g: DualGraph, node: int | str) -> list[tuple[VarNode, EdgeInit, Origin]]:
    """Incoming messages of a node: ``(neighbor, initial operator, origin)`` per edge."""
    if isinstance(node, str):
        node = g.by_name(node).id
    if not 0 <= node < g.n_nodes:
        raise KeyError(f"unknown node {node}")
    return [(g.nodes[e.src], e.init, e.origin) for e in g.edges if e.dst == node]
