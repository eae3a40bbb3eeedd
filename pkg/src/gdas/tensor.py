"""Minimal dense tensor with reverse-mode automatic differentiation.

Every primitive runs in float64 on numpy arrays. A primitive computes its
output eagerly and, when any input requires a gradient, attaches a closure
that maps the output adjoint to one adjoint per parent. ``backward`` walks
the recorded graph in reverse topological order exactly once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when a primitive receives inputs of incompatible shapes."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "retain", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.retain = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        self.retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.retain = False
    out.name = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate tensors keep their adjoint only when ``retain_grad`` was
    called on them. Repeated calls accumulate.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    adj: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=DTYPE)}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None or node.retain:
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            prev = adj.get(key)
            adj[key] = pg if prev is None else prev + pg


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------
# elementwise and reductions
# ----------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_n(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("add_n: empty input list")
    for x in xs[1:]:
        _check_same("add_n", xs[0], x)
    out = xs[0].data.copy()
    for x in xs[1:]:
        out += x.data
    return _make(out, tuple(xs), lambda g: tuple(g for _ in xs), "add_n")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a constant scalar."""
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_const(x: Tensor, c) -> Tensor:
    """Add a constant array of the same shape (no gradient to the constant)."""
    c = np.asarray(c, dtype=DTYPE)
    if c.shape != x.shape:
        raise ShapeError(f"add_const: shape mismatch {x.shape} vs {c.shape}")
    return _make(x.data + c, (x,), lambda g: (g,), "add_const")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise ValueError("log: non-positive input")
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _make(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def take_row(x: Tensor, i: int) -> Tensor:
    """Row ``i`` of a 2-D tensor as a 1-D tensor."""
    if x.ndim != 2:
        raise ShapeError(f"take_row: expected 2-D input, got {x.shape}")
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        out[i] = g
        return (out,)

    return _make(x.data[i].copy(), (x,), bw, "take_row")


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Value of ``hard`` in the forward pass, identity gradient into ``soft``."""
    hard = np.asarray(hard, dtype=DTYPE)
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through: shape mismatch {hard.shape} vs {soft.shape}")
    return _make(hard.copy(), (soft,), lambda g: (g,), "straight_through")


def weighted_sum(w: Tensor, xs: dict[int, Tensor]) -> Tensor:
    """Sum over k of w[k] * xs[k] for the indices present in ``xs``.

    Coordinates of ``w`` absent from ``xs`` receive no gradient, which is how
    the accelerated pass back-propagates only at the selected candidate.
    """
    if w.ndim != 1:
        raise ShapeError(f"weighted_sum: weights must be 1-D, got {w.shape}")
    ks = sorted(xs)
    if not ks:
        raise ShapeError("weighted_sum: no operands")
    first = xs[ks[0]].shape
    for k in ks:
        if not 0 <= k < w.shape[0]:
            raise ShapeError(f"weighted_sum: index {k} out of range for weights {w.shape}")
        if xs[k].shape != first:
            raise ShapeError(f"weighted_sum: operand shapes differ {first} vs {xs[k].shape}")
    wd = w.data
    out = wd[ks[0]] * xs[ks[0]].data
    for k in ks[1:]:
        out = out + wd[k] * xs[k].data
    parents = (w,) + tuple(xs[k] for k in ks)

    def bw(g):
        gw = np.zeros_like(wd)
        grads = []
        for k in ks:
            if w.requires_grad:
                gw[k] = np.vdot(g, xs[k].data)
            grads.append(g * wd[k])
        return (gw,) + tuple(grads)

    return _make(out, parents, bw, "weighted_sum")


# ----------------------------------------------------------------------
# dense algebra
# ----------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for x of shape (N, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: incompatible shapes x{x.shape} weight{weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match out features {weight.shape[0]}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(out, parents, bw, "linear")


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """The one permitted broadcast: per-channel bias on (N, C, H, W)."""
    if x.ndim != 4 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_channel_bias: x{x.shape} bias{b.shape}")
    return _make(x.data + b.data[None, :, None, None], (x, b),
                 lambda g: (g, g.sum(axis=(0, 2, 3))), "add_channel_bias")


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), bw, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable log of the softmax along the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def nll(logp: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under log-probabilities (N, C)."""
    labels = np.asarray(labels)
    if logp.ndim != 2 or labels.shape != (logp.shape[0],):
        raise ShapeError(f"nll: logp{logp.shape} labels{labels.shape}")
    n, c = logp.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"nll: label out of range [0, {c})")
    idx = np.arange(n)
    out = -logp.data[idx, labels].mean()

    def bw(g):
        gl = np.zeros((n, c))
        gl[idx, labels] = -float(g) / n
        return (gl,)

    return _make(np.asarray(out), (logp,), bw, "nll")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    return nll(log_softmax(logits), labels)


# ----------------------------------------------------------------------
# spatial primitives, layout (N, C, H, W)
# ----------------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_out_size(size: int, k: int, stride: int, pad: int, dil: int) -> int:
    return (size + 2 * pad - dil * (k - 1) - 1) // stride + 1


def _windows(xp: np.ndarray, kh, kw, sh, sw, dh, dw, ho, wo) -> np.ndarray:
    """Strided view (N, C, Ho, Wo, kh, kw) of a padded input."""
    ekh, ekw = dh * (kh - 1) + 1, dw * (kw - 1) + 1
    v = sliding_window_view(xp, (ekh, ekw), axis=(2, 3))
    return v[:, :, : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw, ::dh, ::dw]


def _scatter_windows(gcols: np.ndarray, padded_shape, kh, kw, sh, sw, dh, dw, ho, wo) -> np.ndarray:
    """Adjoint of ``_windows``: accumulate (N, C, Ho, Wo, kh, kw) into padded input."""
    gx = np.zeros(padded_shape)
    for i in range(kh):
        r0 = i * dh
        for j in range(kw):
            c0 = j * dw
            gx[:, :, r0 : r0 + sh * (ho - 1) + 1 : sh, c0 : c0 + sw * (wo - 1) + 1 : sw] += gcols[..., i, j]
    return gx


def _pad(x: np.ndarray, ph: int, pw: int, value: float = 0.0) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=value)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0,
           dilation=1, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation; weight shape (O, C/groups, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D x and weight, got x{x.shape} weight{weight.shape}")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups or cg != c // groups:
        raise ShapeError(f"conv2d: x{x.shape} incompatible with weight{weight.shape} at groups={groups}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias{bias.shape} vs out channels {o}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    ho, wo = conv_out_size(h, kh, sh, ph, dh), conv_out_size(w, kw, sw, pw, dw)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: empty output for x{x.shape} kernel{(kh, kw)}")
    geometry = (kh, kw, sh, sw, ph, pw, dh, dw, ho, wo)
    if groups == 1 and kh == 1 and kw == 1 and ph == 0 and pw == 0:
        out, bw_core = _conv1x1(x, weight, geometry)
    elif groups == c and o == c:
        out, bw_core = _conv_depthwise(x, weight, geometry)
    else:
        out, bw_core = _conv_general(x, weight, groups, geometry)
    if bias is not None:
        out += bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx, gw = bw_core(g)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(out, parents, bw, "conv2d")


def _conv1x1(x, weight, geometry):
    kh, kw, sh, sw, ph, pw, dh, dw, ho, wo = geometry
    n, c, h, w = x.shape
    o = weight.shape[0]
    xs = x.data[:, :, : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw]
    xs = np.ascontiguousarray(xs).reshape(n, c, ho * wo)
    wm = weight.data.reshape(o, c)
    out = np.matmul(wm, xs).reshape(n, o, ho, wo)

    def bw(g):
        gf = g.reshape(n, o, ho * wo)
        gw = gx = None
        if weight.requires_grad:
            gw = np.einsum("nop,ncp->oc", gf, xs).reshape(weight.shape)
        if x.requires_grad:
            gxs = np.matmul(wm.T, gf).reshape(n, c, ho, wo)
            if sh == 1 and sw == 1:
                gx = gxs
            else:
                gx = np.zeros((n, c, h, w))
                gx[:, :, : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw] = gxs
        return gx, gw

    return out, bw


def _conv_depthwise(x, weight, geometry):
    kh, kw, sh, sw, ph, pw, dh, dw, ho, wo = geometry
    n, c, h, w = x.shape
    xp = _pad(x.data, ph, pw)
    wd = weight.data[:, 0]
    taps = [(i, j, (slice(None), slice(None),
                    slice(i * dh, i * dh + sh * (ho - 1) + 1, sh),
                    slice(j * dw, j * dw + sw * (wo - 1) + 1, sw)))
            for i in range(kh) for j in range(kw)]
    out = np.zeros((n, c, ho, wo))
    for i, j, sl in taps:
        out += xp[sl] * wd[None, :, i, j, None, None]

    def bw(g):
        gw = gx = None
        if weight.requires_grad:
            gw = np.empty((c, 1, kh, kw))
            for i, j, sl in taps:
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
        if x.requires_grad:
            gxp = np.zeros(xp.shape)
            for i, j, sl in taps:
                gxp[sl] += g * wd[None, :, i, j, None, None]
            gx = gxp[:, :, ph : ph + h, pw : pw + w]
        return gx, gw

    return out, bw


def _conv_general(x, weight, groups, geometry):
    kh, kw, sh, sw, ph, pw, dh, dw, ho, wo = geometry
    n, c, h, w = x.shape
    o, cg = weight.shape[:2]
    og = o // groups
    xp = _pad(x.data, ph, pw)
    cols = _windows(xp, kh, kw, sh, sw, dh, dw, ho, wo)
    wd = weight.data
    if groups == 1:
        out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    else:
        colsg = cols.reshape(n, groups, cg, ho, wo, kh, kw)
        wg = wd.reshape(groups, og, cg, kh, kw)
        out = np.einsum("ngchwij,gocij->ngohw", colsg, wg).reshape(n, o, ho, wo)
    out = np.ascontiguousarray(out)

    def bw(g):
        gx = gw = None
        if groups == 1:
            if weight.requires_grad:
                gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
            if x.requires_grad:
                gcols = np.tensordot(g, wd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        else:
            gg = g.reshape(n, groups, og, ho, wo)
            colsg = cols.reshape(n, groups, cg, ho, wo, kh, kw)
            if weight.requires_grad:
                gw = np.einsum("ngohw,ngchwij->gocij", gg, colsg).reshape(wd.shape)
            if x.requires_grad:
                wg = wd.reshape(groups, og, cg, kh, kw)
                gcols = np.einsum("ngohw,gocij->ngchwij", gg, wg).reshape(n, c, ho, wo, kh, kw)
        if x.requires_grad:
            gxp = _scatter_windows(gcols, xp.shape, kh, kw, sh, sw, dh, dw, ho, wo)
            gx = gxp[:, :, ph : ph + h, pw : pw + w]
        return gx, gw

    return out, bw


def max_pool2d(x: Tensor, kernel=3, stride=1, padding=0) -> Tensor:
    """Max pooling; ties route the gradient to the first maximum in scan order."""
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    ho, wo = conv_out_size(h, kh, sh, ph, 1), conv_out_size(w, kw, sw, pw, 1)
    xp = _pad(x.data, ph, pw, -np.inf)
    cols = _windows(xp, kh, kw, sh, sw, 1, 1, ho, wo).reshape(n, c, ho, wo, kh * kw)
    arg = cols.argmax(axis=-1)
    out = np.take_along_axis(cols, arg[..., None], axis=-1)[..., 0]
    padded_shape = xp.shape

    def bw(g):
        gcols = np.zeros((n, c, ho, wo, kh * kw))
        np.put_along_axis(gcols, arg[..., None], g[..., None], axis=-1)
        gxp = _scatter_windows(gcols.reshape(n, c, ho, wo, kh, kw), padded_shape, kh, kw, sh, sw, 1, 1, ho, wo)
        return (gxp[:, :, ph : ph + h, pw : pw + w],)

    return _make(out, (x,), bw, "max_pool2d")


def avg_pool2d(x: Tensor, kernel=3, stride=1, padding=0) -> Tensor:
    """Average pooling over in-bounds elements only (padding is not counted)."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    ho, wo = conv_out_size(h, kh, sh, ph, 1), conv_out_size(w, kw, sw, pw, 1)
    xp = _pad(x.data, ph, pw)
    ones = _pad(np.ones((1, 1, h, w)), ph, pw)
    counts = _windows(ones, kh, kw, sh, sw, 1, 1, ho, wo).sum(axis=(-2, -1))  # 1,1,ho,wo
    out = _windows(xp, kh, kw, sh, sw, 1, 1, ho, wo).sum(axis=(-2, -1)) / counts
    padded_shape = xp.shape

    def bw(g):
        gc = np.broadcast_to((g / counts)[..., None, None], (n, c, ho, wo, kh, kw))
        gxp = _scatter_windows(gc, padded_shape, kh, kw, sh, sw, 1, 1, ho, wo)
        return (gxp[:, :, ph : ph + h, pw : pw + w],)

    return _make(out, (x,), bw, "avg_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    return _make(x.data.mean(axis=(2, 3)), (x,),
                 lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),),
                 "global_avg_pool")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not xs:
        raise ShapeError("concat: empty input list")
    ref = list(xs[0].shape)
    for x in xs[1:]:
        s = list(x.shape)
        if len(s) != len(ref) or s[:axis] + s[axis + 1 :] != ref[:axis] + ref[axis + 1 :]:
            raise ShapeError(f"concat: shapes {[t.shape for t in xs]} disagree off axis {axis}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    h, w = x.shape[2], x.shape[3]
    out = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    return _make(out, (x,), lambda g: (g[:, :, top : top + h, left : left + w],), "pad2d")


def crop2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    n, c, h, w = x.shape
    if top + bottom >= h or left + right >= w:
        raise ShapeError(f"crop2d: crop ({top},{bottom},{left},{right}) empties {x.shape}")
    out = x.data[:, :, top : h - bottom, left : w - right].copy()

    def bw(g):
        gx = np.zeros((n, c, h, w))
        gx[:, :, top : h - bottom, left : w - right] = g
        return (gx,)

    return _make(out, (x,), bw, "crop2d")


def batch_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with batch statistics over (N, H, W)."""
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: expected 4-D input, got {x.shape}")
    c = x.shape[1]
    if (gamma is None) != (beta is None):
        raise ValueError("batch_norm: gamma and beta must be given together")
    if gamma is not None and (gamma.shape != (c,) or beta.shape != (c,)):
        raise ShapeError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} vs channels {c}")
    xd = x.data
    mu = xd.mean(axis=(0, 2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    if gamma is None:
        out = xhat
        parents = (x,)
    else:
        out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
        parents = (x, gamma, beta)

    def bw(g):
        gxhat = g if gamma is None else g * gamma.data[None, :, None, None]
        gx = None
        if x.requires_grad:
            m1 = gxhat.mean(axis=(0, 2, 3), keepdims=True)
            m2 = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = inv * (gxhat - m1 - xhat * m2)
        if gamma is None:
            return (gx,)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _make(out, parents, bw, "batch_norm")


def zeros_like_shape(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
