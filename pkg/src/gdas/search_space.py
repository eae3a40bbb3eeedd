"""Cell DAG bookkeeping and the weight-sharing supernet.

Nodes are 1-indexed: 1 and 2 are the cell inputs, 3..B+2 are computational
nodes, B+3 is the output (concatenation of the computational nodes). Edge
(i, j) carries node j into node i, j < i.
"""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import sampler
from . import tensor as T
from .network import FixedReductionCell, Network, NetworkPlan, make_preprocess
from .ops import CANDIDATE_OPS, Module, make_op, validate_op_names
from .tensor import ShapeError, Tensor

SELECTION_MODES = ("hard_sampled", "relaxed", "accelerated")
CELL_TYPES = ("normal", "reduction")


@dataclass(frozen=True)
class SearchSpaceSpec:
    B: int
    K: int | None = None
    T: int = 2
    ops: tuple[str, ...] | None = None
    num_cell_inputs: int = 2

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.num_cell_inputs != 2:
            raise ValueError("cells take exactly two inputs")
        ops = self.ops
        if ops is None:
            if self.K is None:
                ops = CANDIDATE_OPS
            elif 1 <= self.K <= len(CANDIDATE_OPS):
                ops = CANDIDATE_OPS[: self.K]
        if ops is not None:
            ops = validate_op_names(ops)
            object.__setattr__(self, "ops", ops)
            if self.K is not None and self.K != len(ops):
                raise ValueError(f"K={self.K} does not match {len(ops)} ops")
            object.__setattr__(self, "K", len(ops))
        elif self.K is None or self.K < 1:
            raise ValueError("K must be >= 1")

    @property
    def total_nodes(self) -> int:
        return self.B + 3

    @property
    def num_edges(self) -> int:
        return len(edge_list(self))

    def predecessors(self, node: int) -> list[int]:
        return list(range(1, node))


def edge_list(spec: SearchSpaceSpec) -> list[tuple[int, int]]:
    """All (i, j) edges, lexicographic by (i, j)."""
    return [(i, j) for i in range(3, spec.B + 3) for j in range(1, i)]


def edge_index(spec: SearchSpaceSpec) -> dict[tuple[int, int], int]:
    return {e: n for n, e in enumerate(edge_list(spec))}


def count_subgraphs(spec: SearchSpaceSpec) -> int:
    """Number of distinct derived cells: prod over nodes of C(p_i, T) * K^T."""
    total = 1
    for i in range(3, spec.B + 3):
        p = i - 1
        if spec.T > p:
            raise ValueError(f"T={spec.T} exceeds the {p} predecessors of node {i}")
        total *= math.comb(p, spec.T) * spec.K ** spec.T
    return total


class ArchParams:
    """Per cell type, an (E, K) tensor of logits; row e belongs to edge e."""

    def __init__(self, spec: SearchSpaceSpec, cell_types=CELL_TYPES, seed: int = 0, scale: float = 1e-3):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.tensors: dict[str, Tensor] = {}
        for ct in cell_types:
            if ct not in CELL_TYPES:
                raise ValueError(f"unknown cell type {ct!r}")
            self.tensors[ct] = Tensor(scale * rng.standard_normal((spec.num_edges, spec.K)),
                                      requires_grad=True, name=f"arch_{ct}")

    @property
    def cell_types(self) -> tuple[str, ...]:
        return tuple(self.tensors)

    def __getitem__(self, cell_type: str) -> Tensor:
        return self.tensors[cell_type]

    def __contains__(self, cell_type) -> bool:
        return cell_type in self.tensors

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def edge_logits(self, cell_type: str, edge: tuple[int, int]) -> np.ndarray:
        return self.tensors[cell_type].data[edge_index(self.spec)[edge]]

    def probabilities(self, cell_type: str) -> np.ndarray:
        return sampler.edge_probabilities(self.tensors[cell_type])

    def to_dict(self) -> dict:
        edges = edge_list(self.spec)
        out = {"B": self.spec.B, "T": self.spec.T, "ops": list(self.spec.ops), "cells": {}}
        for ct, t in self.tensors.items():
            probs = sampler.edge_probabilities(t)
            out["cells"][ct] = {
                f"{i}<-{j}": {"logits": t.data[n].tolist(), "probs": probs[n].tolist()}
                for n, (i, j) in enumerate(edges)
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ArchParams":
        spec = SearchSpaceSpec(B=int(d["B"]), T=int(d["T"]), ops=tuple(d["ops"]))
        obj = cls(spec, cell_types=tuple(d["cells"]))
        edges = edge_list(spec)
        for ct, table in d["cells"].items():
            rows = [table[f"{i}<-{j}"]["logits"] for i, j in edges]
            obj.tensors[ct].data = np.asarray(rows, dtype=np.float64)
        return obj

    @classmethod
    def from_json(cls, text: str) -> "ArchParams":
        return cls.from_dict(json.loads(text))


class SearchCell(Module):
    """Supernet cell holding every candidate op on every edge."""

    def __init__(self, spec: SearchSpaceSpec, c_pp, c_p, c, reduction, reduction_prev, affine, rng,
                 pool_bn: bool = True):
        self.spec = spec
        self.reduction = reduction
        self.c = c
        self.cell_type = "reduction" if reduction else "normal"
        self.pre0, self.pre1 = make_preprocess(c_pp, c_p, c, reduction_prev, affine, rng)
        self.edges = edge_list(spec)
        self.edge_ops = []
        for i, j in self.edges:
            stride = 2 if reduction and j <= 2 else 1
            self.edge_ops.append([make_op(k, c, c, stride, affine, rng, pool_bn) for k in spec.ops])
        self.op_evals = 0

    def cell(self, s0: Tensor, s1: Tensor, weights: Tensor | None = None, mode: str = "hard_sampled") -> Tensor:
        return cell_forward(self, (s0, s1), weights, mode)


def cell_forward(cell: SearchCell, inputs, weights: Tensor, mode: str) -> Tensor:
    """Forward one supernet cell under per-edge mixture weights (E, K).

    ``hard_sampled`` and ``relaxed`` evaluate every candidate and mix by the
    weights; ``accelerated`` evaluates only the argmax candidate per edge.
    """
    if mode not in SELECTION_MODES:
        raise ValueError(f"unknown selection mode {mode!r}; expected one of {SELECTION_MODES}")
    if weights is None:
        raise ValueError("cell_forward needs mixture weights")
    spec = cell.spec
    if weights.shape != (len(cell.edges), spec.K):
        raise ShapeError(f"cell_forward: weights {weights.shape} vs ({len(cell.edges)}, {spec.K})")
    s0, s1 = inputs
    states = [cell.pre0(s0), cell.pre1(s1)]
    if states[0].shape != states[1].shape:
        raise ShapeError(f"cell_forward: preprocessed inputs differ {states[0].shape} vs {states[1].shape}")
    e = 0
    for i in range(3, spec.B + 3):
        contributions = []
        for j in range(1, i):
            w = T.take_row(weights, e)
            ops = cell.edge_ops[e]
            x = states[j - 1]
            if mode == "accelerated":
                ks = [int(np.argmax(w.data))]
            else:
                ks = range(spec.K)
            contributions.append(T.weighted_sum(w, {k: ops[k](x) for k in ks}))
            cell.op_evals += len(ks)
            e += 1
        states.append(T.add_n(contributions))
    return T.concat(states[2:], axis=1)


@dataclass
class SampleRecord:
    cell_index: int
    cell_type: str
    noise: np.ndarray
    weights: Tensor
    soft: Tensor | None


class Supernet(Network):
    """Weight-sharing supernet; ArchParams are shared by every cell of a type."""

    def __init__(self, spec: SearchSpaceSpec, plan: NetworkPlan, fixed_reduction: bool = False,
                 seed: int = 0, arch_seed: int | None = None, affine: bool = False):
        if plan.B != spec.B:
            raise ValueError(f"plan.B={plan.B} does not match spec.B={spec.B}")
        rng = np.random.default_rng(seed)
        cells = []
        for lay in plan.layout():
            if lay["reduction"] and fixed_reduction:
                cells.append(FixedReductionCell(lay["c_p"], lay["c_out"], affine, rng))
            else:
                cells.append(SearchCell(spec, lay["c_pp"], lay["c_p"], lay["c"], lay["reduction"],
                                        lay["reduction_prev"], affine, rng))
        super().__init__(plan, cells, affine, rng)
        self.spec = spec
        self.fixed_reduction = fixed_reduction
        types = ("normal",) if fixed_reduction else CELL_TYPES
        self.arch = ArchParams(spec, types, seed=seed + 1 if arch_seed is None else arch_seed)
        self._sampling: dict | None = None
        self.records: list[SampleRecord] = []

    def search_cells(self) -> list[tuple[int, SearchCell]]:
        return [(i, c) for i, c in enumerate(self.cells) if isinstance(c, SearchCell)]

    @property
    def op_evals(self) -> int:
        return sum(c.op_evals for _, c in self.search_cells())

    def reset_op_evals(self) -> None:
        for _, c in self.search_cells():
            c.op_evals = 0

    def cell_kwargs(self, index: int) -> dict:
        cell = self.cells[index]
        if not isinstance(cell, SearchCell):
            return {}
        s = self._sampling
        mode = s["mode"]
        a = self.arch[cell.cell_type]
        if not s["arch_grad"]:
            a = Tensor(a.data)
        if "fixed_weights" in s:
            w = Tensor(np.asarray(s["fixed_weights"][cell.cell_type], dtype=np.float64))
            noise, soft = None, None
            run_mode = "relaxed" if mode == "relaxed" else ("accelerated" if mode == "accelerated" else "hard_sampled")
        else:
            noise = s["noise"](index, cell.spec.num_edges, cell.spec.K)
            if mode == "relaxed":
                w = sampler.gumbel_softmax(a, noise, s["tau"])
                soft = w
            else:
                w, soft = sampler.straight_through_select(a, noise, s["tau"])
            run_mode = mode
        if s.get("retain"):
            w.retain_grad()
        self.records.append(SampleRecord(index, cell.cell_type, noise, w, soft))
        return {"weights": w, "mode": run_mode}

    def forward(self, x, mode: str = "hard_sampled", tau: float = 1.0, noise=None,
                arch_grad: bool = True, fixed_weights: dict | None = None, retain: bool = False) -> Tensor:
        """Run the supernet.

        ``noise`` is a callable (cell_index, num_edges, K) -> (E, K) Gumbel
        draws, or None for fresh draws from a default generator.
        ``fixed_weights`` maps cell type to explicit (E, K) mixture weights
        and bypasses sampling.
        """
        with self._sampled(mode, tau, noise, arch_grad, fixed_weights, retain):
            return super().forward(x)

    __call__ = forward

    def sampled_features(self, x, mode: str = "hard_sampled", tau: float = 1.0, noise=None) -> list[Tensor]:
        """Stem and cell outputs of one sampled forward pass (see ``Network.features``)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        with self._sampled(mode, tau, noise, False, None, False):
            return self.features(x)

    @contextlib.contextmanager
    def _sampled(self, mode, tau, noise, arch_grad, fixed_weights, retain):
        if mode not in SELECTION_MODES:
            raise ValueError(f"unknown selection mode {mode!r}; expected one of {SELECTION_MODES}")
        if noise is None:
            rng = np.random.default_rng()
            noise = lambda i, e, k: sampler.gumbel_noise(rng, (e, k))  # noqa: E731
        self._sampling = dict(mode=mode, tau=tau, noise=noise, arch_grad=arch_grad, retain=retain)
        if fixed_weights is not None:
            self._sampling["fixed_weights"] = fixed_weights
        self.records = []
        try:
            yield
        finally:
            self._sampling = None
