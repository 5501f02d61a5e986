"""Bond-graph domain model, line-oriented DSL, validator and linear constitutive relations.

DSL grammar (one declaration per line, ``#`` starts a comment)::

    component <kind> <id> [coeff=<float>]
    bond <id> <tail> -> <head> stroke=<head|tail>

``<kind>`` is one of SE, SF, R, I, C, TF, GY, J0, J1 and a component reference is
the kind immediately followed by the id (``R1``, ``GY1``, ``J11``); a ``.`` may
separate the two (``J1.1``). ``stroke=head`` puts the causal stroke at the head
end, meaning the head component receives the effort and returns the flow.

Coefficients follow the causal orientation of each element: R stores ``a`` with
``e = a*f``, I stores ``a`` with ``f = (1/a)*int(e)``, C stores ``a`` with
``e = (1/a)*int(f)``. TF and GY store the single ratio relating their two bonds
``i < j``: TF ``e_i = a*e_j, f_j = a*f_i``; GY ``e_i = a*f_j, e_j = a*f_i``.
"""
from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, NamedTuple, Sequence


class Kind(str, Enum):
    SE = "SE"
    SF = "SF"
    R = "R"
    I = "I"  # noqa: E741
    C = "C"
    TF = "TF"
    GY = "GY"
    J0 = "J0"
    J1 = "J1"

    def __str__(self) -> str:
        return self.value

    @property
    def is_element(self) -> bool:
        return self in ELEMENTS

    @property
    def is_junction(self) -> bool:
        return self in JUNCTIONS


ELEMENTS = frozenset({Kind.SE, Kind.SF, Kind.R, Kind.I, Kind.C})
JUNCTIONS = frozenset({Kind.TF, Kind.GY, Kind.J0, Kind.J1})
SOURCES = frozenset({Kind.SE, Kind.SF})
STORAGE = frozenset({Kind.I, Kind.C})
COEFFICIENT_KINDS = frozenset({Kind.R, Kind.I, Kind.C, Kind.TF, Kind.GY})
KIND_ORDER = {k: n for n, k in enumerate(Kind)}


class Ref(NamedTuple):
    """Reference to a component by ``(kind, id)``."""

    kind: Kind
    id: int

    def __str__(self) -> str:
        sep = "." if self.kind in (Kind.J0, Kind.J1) else ""
        return f"{self.kind.value}{sep}{self.id}"

    def sort_key(self) -> tuple[int, int]:
        return KIND_ORDER[self.kind], self.id


@dataclass(frozen=True)
class Component:
    kind: Kind
    id: int
    coefficient: float | None = None

    @property
    def ref(self) -> Ref:
        return Ref(self.kind, self.id)

    def __str__(self) -> str:
        return str(self.ref)


@dataclass(frozen=True)
class Bond:
    id: int
    tail: Ref
    head: Ref
    stroke_at_head: bool

    def other(self, ref: Ref) -> Ref:
        if ref == self.tail:
            return self.head
        if ref == self.head:
            return self.tail
        raise KeyError(f"{ref} is not an endpoint of bond {self.id}")

    def toward(self, ref: Ref) -> bool:
        """True when the bond's power orientation points at ``ref``."""
        return self.head == ref

    def stroke_at(self, ref: Ref) -> bool:
        """True when the causal stroke sits at ``ref``'s end (``ref`` receives effort)."""
        return (self.head == ref) == self.stroke_at_head


@dataclass(frozen=True)
class BondGraph:
    components: tuple[Component, ...]
    bonds: tuple[Bond, ...]
    _by_ref: dict = field(init=False, repr=False, compare=False, hash=False)
    _incident: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        comps = tuple(sorted(self.components, key=lambda c: c.ref.sort_key()))
        bonds = tuple(sorted(self.bonds, key=lambda b: b.id))
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "bonds", bonds)
        object.__setattr__(self, "_by_ref", {c.ref: c for c in comps})
        incident = defaultdict(list)
        for b in bonds:
            incident[b.tail].append(b)
            if b.head != b.tail:
                incident[b.head].append(b)
        object.__setattr__(self, "_incident", dict(incident))

    def component(self, ref: Ref) -> Component:
        return self._by_ref[ref]

    def __contains__(self, ref) -> bool:
        return ref in self._by_ref

    def incident(self, ref: Ref) -> list[Bond]:
        return list(self._incident.get(ref, ()))

    def bond(self, bond_id: int) -> Bond:
        for b in self.bonds:
            if b.id == bond_id:
                return b
        raise KeyError(bond_id)

    def with_bond(self, bond: Bond) -> "BondGraph":
        """Copy of the graph with the bond of the same id replaced."""
        return BondGraph(self.components, tuple(bond if b.id == bond.id else b for b in self.bonds))

    def with_component(self, comp: Component) -> "BondGraph":
        return BondGraph(tuple(comp if c.ref == comp.ref else c for c in self.components), self.bonds)

    def __str__(self) -> str:
        return emit_dsl(self)


# --------------------------------------------------------------------------- DSL

class DSLError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class DSLSyntaxError(DSLError):
    pass


class DuplicateIdError(DSLError):
    pass


class UndeclaredComponentError(DSLError):
    pass


_REF_RE = re.compile(r"^(SE|SF|TF|GY|J0|J1|R|I|C)[.·:]?([0-9]+)$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _tokens(line: str) -> list[tuple[str, int]]:
    return [(m.group(0), m.start() + 1) for m in re.finditer(r"->|[^\s]+?(?=->|\s|$)", line)]


def _parse_ref(tok: str, lineno: int, col: int) -> Ref:
    m = _REF_RE.match(tok)
    if not m:
        raise DSLSyntaxError(f"bad component reference {tok!r}", lineno, col)
    ident = int(m.group(2))
    if ident <= 0:
        raise DSLSyntaxError(f"component id must be positive in {tok!r}", lineno, col)
    return Ref(Kind(m.group(1)), ident)


def parse_dsl(text: str) -> BondGraph:
    """Parse DSL text into a BondGraph. No semantic validation is done here."""
    components: dict[Ref, Component] = {}
    pending: list[tuple[int, int, Ref, Ref, bool, int, int]] = []
    bond_ids: set[int] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = _tokens(line)
        if not toks:
            continue
        head, col = toks[0]
        if head == "component":
            if len(toks) not in (3, 4):
                raise DSLSyntaxError("expected 'component <kind> <id> [coeff=<float>]'", lineno, col)
            kind_tok, kcol = toks[1]
            try:
                kind = Kind(kind_tok)
            except ValueError:
                raise DSLSyntaxError(f"unknown component kind {kind_tok!r}", lineno, kcol) from None
            id_tok, icol = toks[2]
            if not id_tok.isdigit() or int(id_tok) <= 0:
                raise DSLSyntaxError(f"component id must be a positive integer, got {id_tok!r}", lineno, icol)
            coeff = None
            if len(toks) == 4:
                ctok, ccol = toks[3]
                if not ctok.startswith("coeff=") or not _FLOAT_RE.match(ctok[6:]):
                    raise DSLSyntaxError(f"expected coeff=<float>, got {ctok!r}", lineno, ccol)
                coeff = float(ctok[6:])
            ref = Ref(kind, int(id_tok))
            if ref in components:
                raise DuplicateIdError(f"component {ref} declared twice", lineno, icol)
            components[ref] = Component(kind, ref.id, coeff)
        elif head == "bond":
            if len(toks) != 6 or toks[3][0] != "->":
                raise DSLSyntaxError("expected 'bond <id> <tail> -> <head> stroke=<head|tail>'", lineno, col)
            id_tok, icol = toks[1]
            if not id_tok.isdigit():
                raise DSLSyntaxError(f"bond id must be an integer, got {id_tok!r}", lineno, icol)
            tail = _parse_ref(toks[2][0], lineno, toks[2][1])
            hd = _parse_ref(toks[4][0], lineno, toks[4][1])
            stok, scol = toks[5]
            if stok not in ("stroke=head", "stroke=tail"):
                raise DSLSyntaxError(f"expected stroke=head or stroke=tail, got {stok!r}", lineno, scol)
            bid = int(id_tok)
            if bid in bond_ids:
                raise DuplicateIdError(f"bond {bid} declared twice", lineno, icol)
            bond_ids.add(bid)
            pending.append((bid, lineno, tail, hd, stok == "stroke=head", toks[2][1], toks[4][1]))
        else:
            raise DSLSyntaxError(f"unknown declaration {head!r}", lineno, col)
    if not components and not pending:
        raise DSLSyntaxError("no declarations found", 1, 1)
    bonds = []
    for bid, lineno, tail, hd, at_head, tcol, hcol in pending:
        for ref, col in ((tail, tcol), (hd, hcol)):
            if ref not in components:
                raise UndeclaredComponentError(f"bond {bid} references undeclared component {ref}", lineno, col)
        bonds.append(Bond(bid, tail, hd, at_head))
    return BondGraph(tuple(components.values()), tuple(bonds))


def emit_dsl(g: BondGraph) -> str:
    lines = []
    for c in g.components:
        coeff = f" coeff={c.coefficient!r}" if c.coefficient is not None else ""
        lines.append(f"component {c.kind.value} {c.id}{coeff}")
    for b in g.bonds:
        lines.append(f"bond {b.id} {b.tail} -> {b.head} stroke={'head' if b.stroke_at_head else 'tail'}")
    return "\n".join(lines) + "\n"


def load_dsl(path) -> BondGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_dsl(fh.read())


def dc_motor() -> BondGraph:
    """The seven-bond DC motor bond graph shipped with the package."""
    text = resources.files("nbge").joinpath("data/dc_motor.bg").read_text(encoding="utf-8")
    return parse_dsl(text)


# --------------------------------------------------------------------- validation

class Rule:
    MIN_COMPONENTS = "min-components"
    CONNECTED = "connected"
    COEFFICIENT = "coefficient"
    BOND_IDS = "bond-ids"
    DANGLING = "dangling-reference"
    SELF_LOOP = "self-loop"
    PORT_COUNT = "port-count"
    JUNCTION_ENDPOINT = "junction-endpoint"
    STRONG_BOND = "strong-bond"
    TWO_PORT_CAUSALITY = "two-port-causality"
    SOURCE_CAUSALITY = "source-causality"


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    components: tuple[str, ...] = ()
    bonds: tuple[int, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"rule": v.rule, "message": v.message, "components": list(v.components), "bonds": list(v.bonds)}
                for v in self.violations
            ],
        }


def strong_bonds(g: BondGraph, ref: Ref) -> list[Bond]:
    """Bonds imposing the junction's common variable (effort at J0, flow at J1)."""
    bonds = g.incident(ref)
    if ref.kind == Kind.J0:
        return [b for b in bonds if b.stroke_at(ref)]
    if ref.kind == Kind.J1:
        return [b for b in bonds if not b.stroke_at(ref)]
    raise ValueError(f"{ref} is not a 0/1 junction")


def _connected(g: BondGraph) -> bool:
    refs = [c.ref for c in g.components]
    if not refs:
        return False
    seen = {refs[0]}
    stack = [refs[0]]
    while stack:
        r = stack.pop()
        for b in g.incident(r):
            o = b.other(r)
            if o in g and o not in seen:
                seen.add(o)
                stack.append(o)
    return len(seen) == len(refs)


def validate(g: BondGraph) -> ValidationReport:
    """Check the structural, coefficient and causality invariants of a bond graph."""
    out: list[Violation] = []
    add = out.append

    if len(g.components) < 3:
        add(Violation(Rule.MIN_COMPONENTS, f"bond graph has {len(g.components)} components, at least 3 required",
                      tuple(str(c) for c in g.components)))
    if g.components and not _connected(g):
        add(Violation(Rule.CONNECTED, "bond graph is not connected", tuple(str(c) for c in g.components)))

    for c in g.components:
        if c.kind in COEFFICIENT_KINDS:
            if c.coefficient is None:
                add(Violation(Rule.COEFFICIENT, f"{c} requires a coefficient", (str(c),)))
            elif c.coefficient == 0 or c.coefficient != c.coefficient:
                add(Violation(Rule.COEFFICIENT, f"{c} coefficient must be a nonzero real", (str(c),)))
        elif c.coefficient is not None:
            add(Violation(Rule.COEFFICIENT, f"{c} must not carry a coefficient", (str(c),)))

    ids = [b.id for b in g.bonds]
    if sorted(ids) != list(range(1, len(ids) + 1)):
        add(Violation(Rule.BOND_IDS, f"bond ids must be exactly 1..{len(ids)}, got {sorted(ids)}", (), tuple(ids)))

    for b in g.bonds:
        missing = [r for r in (b.tail, b.head) if r not in g]
        if missing:
            add(Violation(Rule.DANGLING, f"bond {b.id} references missing component(s)",
                          tuple(str(r) for r in missing), (b.id,)))
        if b.tail == b.head:
            add(Violation(Rule.SELF_LOOP, f"bond {b.id} connects {b.tail} to itself", (str(b.tail),), (b.id,)))
        if not (b.tail.kind.is_junction or b.head.kind.is_junction):
            add(Violation(Rule.JUNCTION_ENDPOINT, f"bond {b.id} has no junction endpoint",
                          (str(b.tail), str(b.head)), (b.id,)))

    for c in g.components:
        r = c.ref
        inc = g.incident(r)
        n = len(inc)
        bids = tuple(b.id for b in inc)
        if c.kind.is_element and n != 1:
            add(Violation(Rule.PORT_COUNT, f"element {c} must have exactly 1 bond, has {n}", (str(c),), bids))
        elif c.kind in (Kind.TF, Kind.GY) and n != 2:
            add(Violation(Rule.PORT_COUNT, f"two-port {c} must have exactly 2 bonds, has {n}", (str(c),), bids))
        elif c.kind in (Kind.J0, Kind.J1) and n < 2:
            add(Violation(Rule.PORT_COUNT, f"junction {c} must have at least 2 bonds, has {n}", (str(c),), bids))

        if c.kind in (Kind.J0, Kind.J1) and n >= 1:
            strong = strong_bonds(g, r)
            if len(strong) != 1:
                what = "effort" if c.kind == Kind.J0 else "flow"
                add(Violation(Rule.STRONG_BOND,
                              f"{c} has {len(strong)} strong bonds imposing {what}, exactly 1 required",
                              (str(c),), tuple(b.id for b in strong) or bids))
        elif c.kind in (Kind.TF, Kind.GY) and n == 2:
            at_port = sum(b.stroke_at(r) for b in inc)
            if c.kind == Kind.TF and at_port != 1:
                add(Violation(Rule.TWO_PORT_CAUSALITY,
                              f"{c} needs exactly one causal stroke at its end, has {at_port}", (str(c),), bids))
            if c.kind == Kind.GY and at_port == 1:
                add(Violation(Rule.TWO_PORT_CAUSALITY,
                              f"{c} needs zero or two causal strokes at its end, has 1", (str(c),), bids))
        elif c.kind in SOURCES and n == 1:
            b = inc[0]
            # SE imposes effort (stroke away from it); SF imposes flow (stroke at it)
            if (c.kind == Kind.SE) == b.stroke_at(r):
                what = "effort" if c.kind == Kind.SE else "flow"
                add(Violation(Rule.SOURCE_CAUSALITY, f"source {c} must impose {what} on bond {b.id}",
                              (str(c),), (b.id,)))

    return ValidationReport(tuple(out))


# ------------------------------------------------------------------- relations

class Direction(str, Enum):
    """Which variable a component outputs on its (first) port."""

    EFFORT_OUT = "effort-out"
    FLOW_OUT = "flow-out"


class Op(str, Enum):
    IDENTITY = "identity"
    INTEGRAL = "integral"
    DERIVATIVE = "derivative"


class Var(NamedTuple):
    port: int
    var: str  # "e" or "f"

    def __str__(self) -> str:
        return f"{self.var}{self.port}"


class Term(NamedTuple):
    coeff: float
    op: Op
    var: Var

    def __str__(self) -> str:
        body = {Op.IDENTITY: str(self.var), Op.INTEGRAL: f"∫{self.var}", Op.DERIVATIVE: f"d/dt {self.var}"}[self.op]
        return f"{self.coeff:g}·{body}"


@dataclass(frozen=True)
class Relation:
    """``output = sum(terms)`` in operator form."""

    output: Var
    terms: tuple[Term, ...]

    def __str__(self) -> str:
        rhs = " + ".join(str(t) for t in self.terms).replace("+ -", "- ")
        return f"{self.output} = {rhs}"


class RelationError(ValueError):
    pass


def _lin(out: Var, coeff: float, op: Op, src: Var) -> Relation:
    return Relation(out, (Term(coeff, op, src),))


def constitutive_relation(
    component: Component,
    direction: Direction | int,
    ports: Sequence[int] | None = None,
    signs: Sequence[int] | None = None,
) -> tuple[Relation, ...]:
    """Linear relations of a component solved for the variables it outputs.

    For one- and two-port components ``direction`` says what the component
    outputs on its first port. For 0/1 junctions ``direction`` is the position
    of the strong bond in ``ports`` and ``signs`` holds the balance signs
    (+1 for bonds directed toward the junction).
    """
    kind, a = component.kind, component.coefficient
    if kind in SOURCES:
        raise RelationError(f"source {component} imposes an independent signal")
    if kind in COEFFICIENT_KINDS and not a:
        raise RelationError(f"{component} needs a nonzero coefficient")

    if kind in (Kind.R, Kind.I, Kind.C):
        p = ports[0] if ports else 1
        e, f = Var(p, "e"), Var(p, "f")
        out_e = Direction(direction) == Direction.EFFORT_OUT
        if kind == Kind.R:
            return (_lin(e, a, Op.IDENTITY, f),) if out_e else (_lin(f, 1 / a, Op.IDENTITY, e),)
        if kind == Kind.I:
            return (_lin(e, a, Op.DERIVATIVE, f),) if out_e else (_lin(f, 1 / a, Op.INTEGRAL, e),)
        return (_lin(e, 1 / a, Op.INTEGRAL, f),) if out_e else (_lin(f, a, Op.DERIVATIVE, e),)

    if kind in (Kind.TF, Kind.GY):
        i, j = ports if ports else (1, 2)
        out_e = Direction(direction) == Direction.EFFORT_OUT
        ei, fi, ej, fj = Var(i, "e"), Var(i, "f"), Var(j, "e"), Var(j, "f")
        if kind == Kind.TF:
            if out_e:
                return _lin(ei, a, Op.IDENTITY, ej), _lin(fj, a, Op.IDENTITY, fi)
            return _lin(ej, 1 / a, Op.IDENTITY, ei), _lin(fi, 1 / a, Op.IDENTITY, fj)
        if out_e:
            return _lin(ei, a, Op.IDENTITY, fj), _lin(ej, a, Op.IDENTITY, fi)
        return _lin(fj, 1 / a, Op.IDENTITY, ei), _lin(fi, 1 / a, Op.IDENTITY, ej)

    # 0/1 junctions
    if ports is None or signs is None or len(ports) != len(signs):
        raise RelationError("junction relations need matching ports and signs")
    s = int(direction)
    if not 0 <= s < len(ports):
        raise RelationError(f"strong bond index {s} out of range")
    balanced, common = ("e", "f") if kind == Kind.J1 else ("f", "e")
    others = [k for k in range(len(ports)) if k != s]
    balance = Relation(
        Var(ports[s], balanced),
        tuple(Term(-signs[k] / signs[s], Op.IDENTITY, Var(ports[k], balanced)) for k in others),
    )
    shared = tuple(_lin(Var(ports[k], common), 1.0, Op.IDENTITY, Var(ports[s], common)) for k in others)
    return (balance,) + shared


def component_direction(g: BondGraph, ref: Ref) -> Direction | int:
    """The causal direction of a component as declared by the graph's strokes."""
    inc = sorted(g.incident(ref), key=lambda b: b.id)
    if ref.kind in (Kind.J0, Kind.J1):
        strong = strong_bonds(g, ref)
        if len(strong) != 1:
            raise RelationError(f"{ref} has no unique strong bond")
        return [b.id for b in inc].index(strong[0].id)
    # receiving effort on the first port means flow goes out
    return Direction.FLOW_OUT if inc[0].stroke_at(ref) else Direction.EFFORT_OUT


def graph_relations(g: BondGraph) -> list[tuple[Component, tuple[Relation, ...]]]:
    """Constitutive relations of every non-source component, in declared causality.

    Port labels are bond ids, so ``Var(3, 'e')`` is the effort of bond 3.
    """
    out = []
    for c in g.components:
        if c.kind in SOURCES:
            continue
        inc = sorted(g.incident(c.ref), key=lambda b: b.id)
        ports = [b.id for b in inc]
        signs = [1 if b.toward(c.ref) else -1 for b in inc]
        out.append((c, constitutive_relation(c, component_direction(g, c.ref), ports, signs)))
    return out


def iter_refs(g: BondGraph, kinds: Iterable[Kind]) -> list[Ref]:
    kinds = set(kinds)
    return [c.ref for c in g.components if c.kind in kinds]
