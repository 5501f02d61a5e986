"""The M x 9 bond matrix: build it from a bond graph and rebuild a bond graph from it.

Columns are ``SE SF R I C`` (element group) and ``TF GY 0 1`` (junction group).
Element cells hold the source id (SE/SF) or the coefficient (R/I/C). Junction
cells hold a :class:`Triplet` ``(signed id, coefficient, imposed variable)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

from .bondgraph import (
    Bond,
    BondGraph,
    Component,
    Kind,
    Ref,
    validate,
)

ELEMENT_COLUMNS = ("SE", "SF", "R", "I", "C")
JUNCTION_COLUMNS = ("TF", "GY", "0", "1")
COLUMNS = ELEMENT_COLUMNS + JUNCTION_COLUMNS

_KIND_TO_COLUMN = {
    Kind.SE: "SE", Kind.SF: "SF", Kind.R: "R", Kind.I: "I", Kind.C: "C",
    Kind.TF: "TF", Kind.GY: "GY", Kind.J0: "0", Kind.J1: "1",
}
_COLUMN_TO_KIND = {v: k for k, v in _KIND_TO_COLUMN.items()}
_JSON_KEYS = dict(zip(COLUMNS, ("se", "sf", "r", "i", "c", "tf", "gy", "j0", "j1")))


class Triplet(NamedTuple):
    signed_id: int
    coeff: float | None
    imposed: str  # "e" or "f"


class BondMatrixError(ValueError):
    pass


class ReconstructionError(ValueError):
    def __init__(self, message: str, rows: tuple[int, ...] = ()):
        where = f"row {', '.join(map(str, rows))}: " if rows else ""
        super().__init__(where + message)
        self.rows = rows


@dataclass(frozen=True)
class BondMatrix:
    """Sparse bond matrix, ``rows[bond_id][column] -> value``."""

    rows: dict

    @property
    def n_bonds(self) -> int:
        return len(self.rows)

    def __getitem__(self, key):
        bond, column = key
        return self.rows[bond].get(column)

    def row(self, bond: int) -> dict:
        return dict(self.rows[bond])

    def to_records(self) -> list[dict]:
        recs = []
        for b in sorted(self.rows):
            rec = {"bond": b}
            for col in COLUMNS:
                v = self.rows[b].get(col)
                rec[_JSON_KEYS[col]] = list(v) if isinstance(v, Triplet) else v
            recs.append(rec)
        return recs

    def dumps(self, **kw) -> str:
        return json.dumps(self.to_records(), **kw)

    @classmethod
    def from_records(cls, records: list[dict]) -> "BondMatrix":
        rows = {}
        for rec in records:
            row = {}
            for col in COLUMNS:
                v = rec.get(_JSON_KEYS[col])
                if v is None:
                    continue
                if col in JUNCTION_COLUMNS:
                    sid, coeff, imposed = v
                    row[col] = Triplet(int(sid), None if coeff is None else float(coeff), str(imposed))
                elif col in ("SE", "SF"):
                    row[col] = int(v)
                else:
                    row[col] = float(v)
            rows[int(rec["bond"])] = row
        return cls(rows)

    @classmethod
    def loads(cls, text: str) -> "BondMatrix":
        return cls.from_records(json.loads(text))

    def __str__(self) -> str:
        head = "bond " + " ".join(f"{c:>16}" for c in COLUMNS)
        lines = [head]
        for b in sorted(self.rows):
            cells = []
            for c in COLUMNS:
                v = self.rows[b].get(c)
                if v is None:
                    cells.append(f"{'.':>16}")
                elif isinstance(v, Triplet):
                    coeff = "-" if v.coeff is None else f"{v.coeff:g}"
                    cells.append(f"{f'({v.signed_id:+d},{coeff},{v.imposed})':>16}")
                else:
                    cells.append(f"{v:>16g}")
            lines.append(f"{b:>4} " + " ".join(cells))
        return "\n".join(lines)


def build_bond_matrix(g: BondGraph) -> BondMatrix:
    report = validate(g)
    if not report.ok:
        raise BondMatrixError("bond graph is not valid: " + "; ".join(v.message for v in report))
    rows = {}
    for b in g.bonds:
        row = {}
        for ref in (b.tail, b.head):
            comp = g.component(ref)
            col = _KIND_TO_COLUMN[ref.kind]
            if col in row:
                raise BondMatrixError(
                    f"bond {b.id} joins two {col} components; one matrix cell cannot hold both")
            if ref.kind in (Kind.SE, Kind.SF):
                row[col] = ref.id
            elif ref.kind.is_element:
                row[col] = comp.coefficient
            else:
                row[col] = Triplet(
                    ref.id if b.toward(ref) else -ref.id,
                    comp.coefficient if ref.kind in (Kind.TF, Kind.GY) else None,
                    "e" if b.stroke_at(ref) else "f",
                )
        rows[b.id] = row
    return BondMatrix(rows)


def _check_row(bond: int, row: dict) -> None:
    unknown = set(row) - set(COLUMNS)
    if unknown:
        raise ReconstructionError(f"unknown columns {sorted(unknown)}", (bond,))
    elems = [c for c in ELEMENT_COLUMNS if row.get(c) is not None]
    juncs = [c for c in JUNCTION_COLUMNS if row.get(c) is not None]
    if not juncs:
        raise ReconstructionError("bond has no junction entry", (bond,))
    if len(elems) > 1:
        raise ReconstructionError(f"bond joins several elements {elems}", (bond,))
    if len(elems) + len(juncs) != 2:
        raise ReconstructionError(f"bond must have exactly two endpoints, got {elems + juncs}", (bond,))
    for c in elems:
        v = row[c]
        if c in ("SE", "SF"):
            if int(v) != v or v <= 0:
                raise ReconstructionError(f"{c} cell must be a positive id, got {v}", (bond,))
        elif v == 0:
            raise ReconstructionError(f"{c} coefficient must be nonzero", (bond,))
    for c in juncs:
        t = row[c]
        if not isinstance(t, Triplet) or t.signed_id == 0 or t.imposed not in ("e", "f"):
            raise ReconstructionError(f"malformed {c} triplet {t!r}", (bond,))
        if (t.coeff is not None) != (c in ("TF", "GY")):
            raise ReconstructionError(f"{c} triplet coefficient presence is wrong", (bond,))


def reconstruct_bond_graph(bm: BondMatrix) -> BondGraph:
    """Rebuild a valid bond graph whose bond matrix equals ``bm``.

    R, I and C ids are not recorded in the matrix; fresh ids are assigned per
    kind in bond-id order.
    """
    components: dict[Ref, Component] = {}
    origin: dict[Ref, list[int]] = {}
    next_id = {Kind.R: 1, Kind.I: 1, Kind.C: 1}
    bonds = []

    def declare(ref: Ref, coeff, bond: int):
        prev = components.get(ref)
        if prev is not None and prev.coefficient != coeff:
            raise ReconstructionError(f"{ref} appears with coefficients {prev.coefficient} and {coeff}",
                                      tuple(origin[ref]) + (bond,))
        components[ref] = Component(ref.kind, ref.id, coeff)
        origin.setdefault(ref, []).append(bond)

    for bond in sorted(bm.rows):
        row = bm.rows[bond]
        _check_row(bond, row)
        juncs = [(c, row[c]) for c in JUNCTION_COLUMNS if row.get(c) is not None]
        elems = [(c, row[c]) for c in ELEMENT_COLUMNS if row.get(c) is not None]
        jrefs = []
        for col, t in juncs:
            ref = Ref(_COLUMN_TO_KIND[col], abs(t.signed_id))
            declare(ref, t.coeff, bond)
            jrefs.append((ref, t))
        if elems:
            col, v = elems[0]
            kind = _COLUMN_TO_KIND[col]
            if kind in (Kind.SE, Kind.SF):
                eref = Ref(kind, int(v))
                declare(eref, None, bond)
            else:
                eref = Ref(kind, next_id[kind])
                next_id[kind] += 1
                declare(eref, float(v), bond)
            (jref, t), = jrefs
            toward_j = t.signed_id > 0
            tail, head = (eref, jref) if toward_j else (jref, eref)
            stroke_at_j = t.imposed == "e"
            bonds.append(Bond(bond, tail, head, stroke_at_j == (head == jref)))
        else:
            (ra, ta), (rb, tb) = jrefs
            if (ta.signed_id > 0) == (tb.signed_id > 0):
                raise ReconstructionError("junction-to-junction bond must point toward exactly one end", (bond,))
            if ta.imposed == tb.imposed:
                raise ReconstructionError(
                    f"junction-to-junction bond imposes {ta.imposed} on both ends", (bond,))
            tail, head = (rb, ra) if ta.signed_id > 0 else (ra, rb)
            t_head = ta if head == ra else tb
            bonds.append(Bond(bond, tail, head, t_head.imposed == "e"))

    g = BondGraph(tuple(components.values()), tuple(bonds))
    report = validate(g)
    if not report.ok:
        v = report.violations[0]
        rows = v.bonds
        if not rows:
            rows = tuple(sorted({b for name in v.components for ref in components
                                 if str(ref) == name for b in origin[ref]}))
        raise ReconstructionError(f"inconsistent matrix ({v.rule}): {v.message}", rows)
    return g
