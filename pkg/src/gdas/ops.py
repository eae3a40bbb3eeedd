"""Candidate operations placed on cell edges.

Each separable conv is ReLU -> depthwise kxk -> pointwise 1x1 -> batch norm.
Normalization has no learnable affine during search and a learnable affine
in final training; callers pick via ``affine``.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

CANDIDATE_OPS = (
    "identity",
    "zeroize",
    "sep_conv_3x3",
    "dil_sep_conv_3x3",
    "sep_conv_5x5",
    "dil_sep_conv_5x5",
    "avg_pool_3x3",
    "max_pool_3x3",
)

PARAMETRIC_OPS = frozenset({"sep_conv_3x3", "dil_sep_conv_3x3", "sep_conv_5x5", "dil_sep_conv_5x5"})

# name -> (kernel, dilation)
_SEP_CONV_GEOMETRY = {
    "sep_conv_3x3": (3, 1),
    "dil_sep_conv_3x3": (3, 2),
    "sep_conv_5x5": (5, 1),
    "dil_sep_conv_5x5": (5, 2),
}


def validate_op_names(names) -> tuple[str, ...]:
    names = tuple(names)
    unknown = [n for n in names if n not in CANDIDATE_OPS]
    if unknown:
        raise ValueError(f"unknown candidate op(s) {unknown}; choose from {list(CANDIDATE_OPS)}")
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate candidate ops in {list(names)}")
    if len(names) < 1:
        raise ValueError("candidate set is empty")
    return names


def reduced(size: int, stride: int) -> int:
    """Spatial extent after a stride-``stride`` op with 'same' padding."""
    return (size + stride - 1) // stride


def init_weight(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


class Module:
    """Anything owning trainable tensors."""

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        seen: set[int] = set()

        def visit(v):
            if isinstance(v, Tensor):
                if v.requires_grad and id(v) not in seen:
                    seen.add(id(v))
                    out.append(v)
            elif isinstance(v, Module):
                for item in vars(v).values():
                    visit(item)
            elif isinstance(v, (list, tuple)):
                for item in v:
                    visit(item)
            elif isinstance(v, dict):
                for item in v.values():
                    visit(item)

        visit(self)
        return out

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))


class BatchNorm(Module):
    def __init__(self, channels: int, affine: bool):
        self.channels = channels
        if affine:
            self.gamma = Tensor(np.ones(channels), requires_grad=True)
            self.beta = Tensor(np.zeros(channels), requires_grad=True)
        else:
            self.gamma = self.beta = None

    def __call__(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta)


class ReLUConvBN(Module):
    """ReLU -> conv -> batch norm; used for 1x1 input preprocessing."""

    def __init__(self, c_in, c_out, kernel, stride, padding, affine, rng):
        kh, kw = T._pair(kernel)
        self.c_in, self.c_out = c_in, c_out
        self.stride, self.padding = stride, padding
        self.weight = init_weight(rng, (c_out, c_in, kh, kw), c_in * kh * kw)
        self.bn = BatchNorm(c_out, affine)

    def __call__(self, x: Tensor) -> Tensor:
        return self.bn(T.conv2d(T.relu(x), self.weight, stride=self.stride, padding=self.padding))


class CandidateOp(Module):
    """One operation instance on one edge.

    ``kind`` is the candidate identifier, ``stride`` is 1 (normal) or 2
    (reduction edge).
    """

    kind = "abstract"

    def __init__(self, c_in: int, c_out: int, stride: int):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.c_in, self.c_out, self.stride = c_in, c_out, stride

    def output_shape(self, in_shape) -> tuple[int, int, int, int]:
        n, _, h, w = in_shape
        return n, self.c_out, reduced(h, self.stride), reduced(w, self.stride)

    def _check(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"{self.kind}: expected {self.c_in} input channels, got shape {x.shape}")

    def __call__(self, x: Tensor) -> Tensor:
        self._check(x)
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.kind}, {self.c_in}->{self.c_out}, stride={self.stride})"


def _zeros_from(x: Tensor, shape) -> Tensor:
    xshape = x.shape
    return T._make(np.zeros(shape), (x,), lambda g: (np.zeros(xshape),), "zeroize")


class Zeroize(CandidateOp):
    kind = "zeroize"

    def forward(self, x):
        return _zeros_from(x, self.output_shape(x.shape))


class FactorizedReduce(CandidateOp):
    """Two 1x1 stride-2 convs on pixel-offset grids, channel-concatenated."""

    kind = "factorized_reduce"

    def __init__(self, c_in, c_out, affine, rng, stride=2):
        super().__init__(c_in, c_out, stride)
        if c_out < 2:
            raise ValueError("factorized reduce needs at least 2 output channels")
        half = c_out // 2
        self.w1 = init_weight(rng, (half, c_in, 1, 1), c_in)
        self.w2 = init_weight(rng, (c_out - half, c_in, 1, 1), c_in)
        self.bn = BatchNorm(c_out, affine)

    def forward(self, x):
        x = T.relu(x)
        a = T.conv2d(x, self.w1, stride=2)
        shifted = T.pad2d(T.crop2d(x, 1, 0, 1, 0), 0, 1, 0, 1)
        b = T.conv2d(shifted, self.w2, stride=2)
        return self.bn(T.concat([a, b], axis=1))


class Identity(CandidateOp):
    kind = "identity"

    def __init__(self, c_in, c_out, stride, affine, rng):
        super().__init__(c_in, c_out, stride)
        if stride == 1 and c_in != c_out:
            raise ShapeError(f"identity at stride 1 needs c_in == c_out, got {c_in} -> {c_out}")
        self.reduce = FactorizedReduce(c_in, c_out, affine, rng) if stride == 2 else None

    def forward(self, x):
        if self.reduce is None:
            return x
        return self.reduce(x)


class SepConv(CandidateOp):
    def __init__(self, kind, c_in, c_out, stride, affine, rng):
        super().__init__(c_in, c_out, stride)
        self.kind = kind
        k, dil = _SEP_CONV_GEOMETRY[kind]
        self.kernel, self.dilation = k, dil
        self.padding = dil * (k - 1) // 2
        self.depthwise = init_weight(rng, (c_in, 1, k, k), k * k)
        self.pointwise = init_weight(rng, (c_out, c_in, 1, 1), c_in)
        self.bn = BatchNorm(c_out, affine)

    def forward(self, x):
        y = T.conv2d(T.relu(x), self.depthwise, stride=self.stride, padding=self.padding,
                     dilation=self.dilation, groups=self.c_in)
        return self.bn(T.conv2d(y, self.pointwise))


class Pool(CandidateOp):
    """3x3 pooling, pad 1; ``normalize`` appends a non-affine batch norm."""

    def __init__(self, kind, c_in, c_out, stride, normalize: bool = False):
        super().__init__(c_in, c_out, stride)
        if c_in != c_out:
            raise ShapeError(f"{kind} needs c_in == c_out, got {c_in} -> {c_out}")
        self.kind = kind
        self._fn = T.avg_pool2d if kind == "avg_pool_3x3" else T.max_pool2d
        self.bn = BatchNorm(c_out, affine=False) if normalize else None

    def forward(self, x):
        y = self._fn(x, 3, self.stride, 1)
        return self.bn(y) if self.bn is not None else y


def make_op(kind: str, c_in: int, c_out: int, stride: int, affine: bool,
            rng: np.random.Generator, pool_bn: bool = False) -> CandidateOp:
    if kind == "identity":
        return Identity(c_in, c_out, stride, affine, rng)
    if kind == "zeroize":
        return Zeroize(c_in, c_out, stride)
    if kind in _SEP_CONV_GEOMETRY:
        return SepConv(kind, c_in, c_out, stride, affine, rng)
    if kind in ("avg_pool_3x3", "max_pool_3x3"):
        return Pool(kind, c_in, c_out, stride, normalize=pool_bn)
    raise ValueError(f"unknown candidate op {kind!r}; choose from {list(CANDIDATE_OPS)}")


def apply(op: CandidateOp, x: Tensor) -> Tensor:
    return op(x)


def stride2_shape_adapter(kind: str, x: Tensor, c_out: int | None = None, affine: bool = False,
                          rng: np.random.Generator | None = None) -> Tensor:
    """Apply ``kind`` at stride 2, halving the spatial extent of ``x``."""
    c_in = x.shape[1]
    rng = rng if rng is not None else np.random.default_rng(0)
    return make_op(kind, c_in, c_out or c_in, 2, affine, rng)(x)
