"""Stacking cells into a classifier network.

Layout: one 3x3 conv head, three blocks of ``N`` normal cells with a
reduction cell between consecutive blocks, then global average pooling and
an affine classifier. Every cell takes the outputs of the two preceding
cells; node channels double at each reduction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .ops import BatchNorm, FactorizedReduce, Module, ReLUConvBN, init_weight, make_op
from .tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkPlan:
    C: int = 4
    N: int = 1
    B: int = 2
    num_classes: int = 4
    in_channels: int = 1
    stem_multiplier: int = 3

    def __post_init__(self):
        for name in ("C", "N", "B", "num_classes", "in_channels", "stem_multiplier"):
            if getattr(self, name) < 1:
                raise ValueError(f"NetworkPlan.{name} must be >= 1")

    def reduction_flags(self) -> list[bool]:
        flags = []
        for block in range(3):
            if block > 0:
                flags.append(True)
            flags.extend([False] * self.N)
        return flags

    def layout(self) -> list[dict]:
        """Channel bookkeeping per cell: inputs, node channels, output channels."""
        c_pp = c_p = self.stem_multiplier * self.C
        c_cur = self.C
        prev_red = False
        out = []
        for red in self.reduction_flags():
            if red:
                c_cur *= 2
            out.append(dict(c_pp=c_pp, c_p=c_p, c=c_cur, reduction=red, reduction_prev=prev_red,
                            c_out=self.B * c_cur))
            c_pp, c_p = c_p, self.B * c_cur
            prev_red = red
        return out


class FixedReductionCell(Module):
    """Hand-designed reducer applied to the previous cell's output.

    Branch a: 1x3 conv stride (1, 2) then 3x1 conv stride (2, 1).
    Branch b: 3x3 max pool stride 2.
    The branches are concatenated and mixed by a 1x1 conv to ``c_out``.
    """

    reduction = True

    def __init__(self, c_in: int, c_out: int, affine: bool, rng: np.random.Generator):
        self.c_in, self.c_out = c_in, c_out
        self.w_1x3 = init_weight(rng, (c_in, c_in, 1, 3), c_in * 3)
        self.w_3x1 = init_weight(rng, (c_in, c_in, 3, 1), c_in * 3)
        self.bn_a = BatchNorm(c_in, affine)
        self.bn_b = BatchNorm(c_in, affine)
        self.w_mix = init_weight(rng, (c_out, 2 * c_in, 1, 1), 2 * c_in)
        self.bn_out = BatchNorm(c_out, affine)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"fixed reduction cell: expected {self.c_in} channels, got {x.shape}")
        a = T.conv2d(T.relu(x), self.w_1x3, stride=(1, 2), padding=(0, 1))
        a = self.bn_a(T.conv2d(a, self.w_3x1, stride=(2, 1), padding=(1, 0)))
        b = self.bn_b(T.max_pool2d(x, 3, 2, 1))
        return self.bn_out(T.conv2d(T.relu(T.concat([a, b], axis=1)), self.w_mix))

    def cell(self, s0: Tensor, s1: Tensor, **_) -> Tensor:
        return self(s1)


def fixed_reduction_cell(c_in: int, c_out: int, affine: bool = True,
                         rng: np.random.Generator | None = None) -> FixedReductionCell:
    if c_in < 1 or c_out < 1:
        raise ValueError("channel counts must be positive")
    return FixedReductionCell(c_in, c_out, affine, rng if rng is not None else np.random.default_rng(0))


def make_preprocess(c_pp, c_p, c, reduction_prev, affine, rng):
    pre0 = FactorizedReduce(c_pp, c, affine, rng) if reduction_prev else ReLUConvBN(c_pp, c, 1, 1, 0, affine, rng)
    pre1 = ReLUConvBN(c_p, c, 1, 1, 0, affine, rng)
    return pre0, pre1


class DerivedCellModule(Module):
    """Trainable realization of a discrete cell."""

    def __init__(self, derived, c_pp, c_p, c, reduction, reduction_prev, affine, rng):
        self.derived = derived
        self.reduction = reduction
        self.c = c
        self.pre0, self.pre1 = make_preprocess(c_pp, c_p, c, reduction_prev, affine, rng)
        self.node_ops = []
        for node in derived.nodes:
            ops = []
            for src, kind in node:
                stride = 2 if reduction and src <= 2 else 1
                ops.append(make_op(kind, c, c, stride, affine, rng))
            self.node_ops.append(ops)
        empty = [i + 3 for i, node in enumerate(derived.nodes) if all(k == "zeroize" for _, k in node)]
        if empty:
            logger.warning("derived %s cell: node(s) %s retain only zeroize inputs; kept as zeros",
                           derived.cell_type, empty)

    def cell(self, s0: Tensor, s1: Tensor, **_) -> Tensor:
        states = [self.pre0(s0), self.pre1(s1)]
        for node, ops in zip(self.derived.nodes, self.node_ops):
            states.append(T.add_n([op(states[src - 1]) for (src, _), op in zip(node, ops)]))
        return T.concat(states[2:], axis=1)


class Network(Module):
    """Stem, stacked cells, classifier. ``cells`` expose ``cell(s0, s1, **kw)``."""

    def __init__(self, plan: NetworkPlan, cells: list, affine: bool, rng: np.random.Generator):
        self.plan = plan
        stem_c = plan.stem_multiplier * plan.C
        self.stem_w = init_weight(rng, (stem_c, plan.in_channels, 3, 3), plan.in_channels * 9)
        self.stem_bn = BatchNorm(stem_c, affine)
        self.cells = cells
        c_last = plan.layout()[-1]["c_out"]
        self.fc_w = init_weight(rng, (plan.num_classes, c_last), c_last)
        self.fc_b = Tensor(np.zeros(plan.num_classes), requires_grad=True)

    def cell_kwargs(self, index: int) -> dict:
        return {}

    def features(self, x: Tensor) -> list[Tensor]:
        """Outputs of the stem and of every cell, in order."""
        if x.ndim != 4 or x.shape[1] != self.plan.in_channels:
            raise ShapeError(f"network input: expected (N, {self.plan.in_channels}, H, W), got {x.shape}")
        s = self.stem_bn(T.conv2d(x, self.stem_w, padding=1))
        outs = [s]
        s0 = s1 = s
        for i, cell in enumerate(self.cells):
            try:
                out = cell.cell(s0, s1, **self.cell_kwargs(i))
            except ShapeError as e:
                raise ShapeError(f"cell {i}: {e}") from e
            s0, s1 = s1, out
            outs.append(out)
        return outs

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        feats = self.features(x)
        return T.linear(T.global_avg_pool(feats[-1]), self.fc_w, self.fc_b)

    __call__ = forward

    def weight_parameters(self) -> list[Tensor]:
        return self.parameters()


def build_network(cell_normal, cell_reduction, plan: NetworkPlan, affine: bool = True,
                  seed: int = 0) -> Network:
    """Stack a derived normal cell with a derived reduction cell or the fixed one.

    ``cell_reduction`` is a derived cell or the string ``"fixed"`` / None.
    """
    rng = np.random.default_rng(seed)
    for dc in (cell_normal, cell_reduction):
        if dc is None or isinstance(dc, str):
            continue
        if dc.B != plan.B:
            raise ShapeError(f"cell has B={dc.B} but plan expects B={plan.B}")
    cells = []
    for i, spec in enumerate(plan.layout()):
        if spec["reduction"]:
            if cell_reduction is None or isinstance(cell_reduction, str):
                cells.append(FixedReductionCell(spec["c_p"], spec["c_out"], affine, rng))
            else:
                cells.append(DerivedCellModule(cell_reduction, spec["c_pp"], spec["c_p"], spec["c"],
                                               True, spec["reduction_prev"], affine, rng))
        else:
            cells.append(DerivedCellModule(cell_normal, spec["c_pp"], spec["c_p"], spec["c"],
                                           False, spec["reduction_prev"], affine, rng))
    return Network(plan, cells, affine, rng)
