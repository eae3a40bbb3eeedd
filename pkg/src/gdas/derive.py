"""Discrete cells: derivation from learned logits, serialization, DOT export."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import sampler
from .network import FixedReductionCell, NetworkPlan, build_network, fixed_reduction_cell  # noqa: F401
from .ops import CANDIDATE_OPS
from .search_space import ArchParams, SearchSpaceSpec, edge_index

EXPORT_FORMATS = ("json", "dot")


@dataclass(frozen=True)
class DerivedCell:
    """Per computational node, T (source node, op) pairs sorted by source."""

    cell_type: str
    B: int
    T: int
    nodes: tuple[tuple[tuple[int, str], ...], ...]

    def __post_init__(self):
        if self.cell_type not in ("normal", "reduction"):
            raise ValueError(f"unknown cell type {self.cell_type!r}")
        if len(self.nodes) != self.B:
            raise ValueError(f"expected {self.B} nodes, got {len(self.nodes)}")
        for offset, node in enumerate(self.nodes):
            i = offset + 3
            if len(node) != self.T:
                raise ValueError(f"node {i}: expected {self.T} inputs, got {len(node)}")
            srcs = [s for s, _ in node]
            if len(set(srcs)) != len(srcs):
                raise ValueError(f"node {i}: repeated source in {srcs}")
            for src, op in node:
                if not 1 <= src < i:
                    raise ValueError(f"node {i}: source {src} does not precede it")
                if op not in CANDIDATE_OPS:
                    raise ValueError(f"node {i}: unknown op {op!r}")

    def to_dict(self) -> dict:
        return {
            "type": self.cell_type,
            "B": self.B,
            "T": self.T,
            "nodes": [[{"src": s, "op": op} for s, op in node] for node in self.nodes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DerivedCell":
        try:
            nodes = tuple(tuple((int(e["src"]), str(e["op"])) for e in node) for node in d["nodes"])
            return cls(str(d["type"]), int(d["B"]), int(d["T"]), nodes)
        except (KeyError, TypeError) as e:
            raise ValueError(f"malformed cell: missing or bad field {e}") from e

    def ops_used(self) -> list[str]:
        return [op for node in self.nodes for _, op in node]


def _omega_indices(ops: tuple[str, ...], omega) -> list[int]:
    if omega is None:
        return list(range(len(ops)))
    idx = []
    for o in omega:
        k = ops.index(o) if isinstance(o, str) else int(o)
        if not 0 <= k < len(ops):
            raise ValueError(f"omega entry {o!r} outside candidate set")
        idx.append(k)
    idx = sorted(set(idx))
    if not idx:
        raise ValueError("omega must be non-empty")
    return idx


def derive_cell(params: ArchParams, cell_type: str = "normal", T: int | None = None,
                omega=None, exclude_zeroize: bool = False) -> DerivedCell:
    """Keep, per node, the T incoming edges of highest importance.

    Importance of an edge is the largest candidate probability over the
    index set ``omega``; the kept edge uses that candidate. Ties go to the
    lower source index, then the lower candidate index.
    """
    spec = params.spec
    T = spec.T if T is None else T
    ops = spec.ops
    if omega is None and exclude_zeroize and "zeroize" in ops:
        omega = [k for k, name in enumerate(ops) if name != "zeroize"]
    om = _omega_indices(ops, omega)
    probs = sampler.edge_probabilities(params[cell_type])
    eidx = edge_index(spec)
    nodes = []
    for i in range(3, spec.B + 3):
        if T > i - 1:
            raise ValueError(f"T={T} exceeds the {i - 1} predecessors of node {i}")
        scored = []
        for j in range(1, i):
            p = probs[eidx[(i, j)]][om]
            best = int(np.argmax(p))
            scored.append((-p[best], j, ops[om[best]]))
        scored.sort(key=lambda t: (t[0], t[1]))
        kept = sorted((j, op) for _, j, op in scored[:T])
        nodes.append(tuple(kept))
    return DerivedCell(cell_type, spec.B, T, tuple(nodes))


def export_cell(cell: DerivedCell, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(cell.to_dict(), indent=2) + "\n"
    if fmt == "dot":
        return _to_dot(cell)
    raise ValueError(f"unknown export format {fmt!r}; expected one of {EXPORT_FORMATS}")


def import_cell(text: str) -> DerivedCell:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"cell JSON does not parse: {e}") from e
    if not isinstance(d, dict):
        raise ValueError("cell JSON must be an object")
    return DerivedCell.from_dict(d)


def _node_label(i: int, B: int) -> str:
    if i == 1:
        return "I1 (c_{k-2})"
    if i == 2:
        return "I2 (c_{k-1})"
    if i == B + 3:
        return f"I{i} (output)"
    return f"I{i}"


def _to_dot(cell: DerivedCell) -> str:
    lines = [f'digraph "{cell.cell_type}_cell" {{', "  rankdir=LR;", "  node [shape=box, style=rounded];"]
    for i in range(1, cell.B + 4):
        lines.append(f'  I{i} [label="{_node_label(i, cell.B)}"];')
    for offset, node in enumerate(cell.nodes):
        i = offset + 3
        for src, op in node:
            lines.append(f'  I{src} -> I{i} [label="{op}"];')
    for i in range(3, cell.B + 3):
        lines.append(f"  I{i} -> I{cell.B + 3} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def derive_both(params: ArchParams, T: int | None = None, omega=None,
                exclude_zeroize: bool = False) -> dict[str, DerivedCell]:
    return {ct: derive_cell(params, ct, T, omega, exclude_zeroize) for ct in params.cell_types}


__all__ = [
    "DerivedCell",
    "derive_cell",
    "derive_both",
    "export_cell",
    "import_cell",
    "fixed_reduction_cell",
    "FixedReductionCell",
    "build_network",
    "NetworkPlan",
    "SearchSpaceSpec",
]
