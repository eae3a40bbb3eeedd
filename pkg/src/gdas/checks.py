"""Independent numerical checks shared by the test suite and ``gdas validate``.

The finite-difference oracle only ever evaluates forward values; it never
touches the adjoint closures it is checking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import sampler
from . import tensor as T
from .data import make_oriented_edges, split_dataset
from .engine import SearchConfig, SearchEngine
from .network import NetworkPlan
from .oracle import validate_marginals
from .search_space import SearchSpaceSpec
from .tensor import Tensor


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(np.ravel(a))), float(np.linalg.norm(np.ravel(b))))
    if den < floor:
        return num
    return num / den


def numerical_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def gradcheck(build: Callable[..., Tensor], inputs: list[Tensor], eps: float = 1e-4,
              seed: int = 0) -> float:
    """Max relative error between autodiff and central differences.

    ``build(*inputs)`` returns any tensor; it is contracted with a fixed
    random projection to obtain a scalar.
    """
    out = build(*inputs)
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    for t in inputs:
        t.grad = None
    T.backward(T.sum(T.mul(out, Tensor(proj))))
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue

        def f():
            with T.no_grad():
                return float(np.sum(build(*inputs).data * proj))

        num = numerical_grad(f, t.data, eps)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(ana, num))
    return worst


def kink_safe(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    """Values bounded away from 0 (ReLU kink)."""
    x = rng.standard_normal(shape)
    return np.sign(x) * (margin + np.abs(x))


def distinct_values(rng: np.random.Generator, shape, spacing: float = 0.01) -> np.ndarray:
    """Values pairwise separated by ``spacing`` and away from 0 (pooling and ReLU kinks)."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.5) * spacing
    return vals.reshape(shape)


# ----------------------------------------------------------------------
# randomized primitive cases
# ----------------------------------------------------------------------

def _p(rng, shape, kind="smooth"):
    if kind == "distinct":
        return Tensor(distinct_values(rng, shape), requires_grad=True)
    if kind == "kink":
        return Tensor(kink_safe(rng, shape), requires_grad=True)
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def primitive_cases(seed: int) -> list[tuple[str, Callable, list[Tensor]]]:
    """One randomized case per primitive for the given seed."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    h = int(rng.integers(3, 7))
    w = int(rng.integers(3, 7))
    k = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    dil = int(rng.integers(1, 3))
    pad = dil * (k - 1) // 2
    o = int(rng.integers(1, 4))
    feats = int(rng.integers(2, 6))
    cases = [
        ("add", T.add, [_p(rng, (n, c, h, w)), _p(rng, (n, c, h, w))]),
        ("mul", T.mul, [_p(rng, (n, c, h, w)), _p(rng, (n, c, h, w))]),
        ("matmul", T.matmul, [_p(rng, (n + 1, feats)), _p(rng, (feats, o))]),
        ("conv2d", lambda x, wt, b: T.conv2d(x, wt, b, stride, pad, dil),
         [_p(rng, (n, c, h, w)), _p(rng, (o, c, k, k)), _p(rng, (o,))]),
        ("conv2d_depthwise", lambda x, wt: T.conv2d(x, wt, None, stride, pad, dil, groups=c),
         [_p(rng, (n, c, h, w)), _p(rng, (c, 1, k, k))]),
        ("conv2d_rect", lambda x, wt: T.conv2d(x, wt, None, (1, 2), (0, 1)),
         [_p(rng, (n, c, h, w)), _p(rng, (o, c, 1, 3))]),
        ("avg_pool", lambda x: T.avg_pool2d(x, 3, stride, 1), [_p(rng, (n, c, h, w))]),
        ("max_pool", lambda x: T.max_pool2d(x, 3, stride, 1), [_p(rng, (n, c, h, w), "distinct")]),
        ("concat", lambda a, b: T.concat([a, b], axis=1), [_p(rng, (n, c, h, w)), _p(rng, (n, o, h, w))]),
        ("global_avg_pool", T.global_avg_pool, [_p(rng, (n, c, h, w))]),
        ("linear", T.linear, [_p(rng, (n + 1, feats)), _p(rng, (o, feats)), _p(rng, (o,))]),
        ("softmax", T.softmax, [_p(rng, (n + 1, feats))]),
        ("log", T.log, [Tensor(rng.uniform(0.5, 2.0, (n, feats)), requires_grad=True)]),
        ("log_softmax", T.log_softmax, [_p(rng, (n + 1, feats))]),
        ("nll", lambda lp: T.nll(lp, rng_labels), [_p(rng, (n + 1, feats))]),
        ("relu", T.relu, [_p(rng, (n, c, h, w), "kink")]),
        ("batch_norm", lambda x, g, b: T.batch_norm(x, g, b),
         [_p(rng, (n + 1, c, h, w)), _p(rng, (c,)), _p(rng, (c,))]),
        ("factorized_shift", lambda x: T.pad2d(T.crop2d(x, 1, 0, 1, 0), 0, 1, 0, 1), [_p(rng, (n, c, h, w))]),
        ("weighted_sum", lambda wv, a, b: T.weighted_sum(wv, {0: a, 2: b}),
         [_p(rng, (3,)), _p(rng, (n, c, h, w)), _p(rng, (n, c, h, w))]),
        ("reuse", lambda a: T.mul(T.add(a, a), a), [_p(rng, (n, c))]),
    ]
    rng_labels = rng.integers(0, feats, size=n + 1)
    return cases


def check_primitives(n_seeds: int = 100, tol: float = 1e-4) -> list[tuple[str, int, float]]:
    """Worst relative error per (primitive, seed) that exceeds ``tol``; empty means pass."""
    failures = []
    for seed in range(n_seeds):
        for name, fn, inputs in primitive_cases(seed):
            err = gradcheck(fn, inputs, seed=seed)
            if not err < tol:
                failures.append((name, seed, err))
    return failures


# ----------------------------------------------------------------------
# supernet-level helpers
# ----------------------------------------------------------------------

def tiny_engine(seed: int = 0, B: int = 2, ops=("identity", "zeroize", "sep_conv_3x3"), n: int = 16,
                C: int = 2, fixed_reduction: bool = True, **cfg) -> SearchEngine:
    ds = make_oriented_edges(n, seed=seed)
    split = split_dataset(ds, 0.5, seed=seed)
    spec = SearchSpaceSpec(B=B, T=1, ops=tuple(ops))
    plan = NetworkPlan(C=C, N=1, B=B, stem_multiplier=1)
    cfg = {"epochs": 1, "batch_size": 8, **cfg}
    config = SearchConfig(seed=seed, fixed_reduction_cell=fixed_reduction, **cfg)
    return SearchEngine(config, split, spec, plan)


def relaxed_supernet_gradcheck(seed: int = 0, eps: float = 1e-4) -> float:
    """Finite-difference check of d(loss)/dA for the relaxed supernet at fixed noise."""
    eng = tiny_engine(seed, ops=("identity", "sep_conv_3x3", "avg_pool_3x3"), n=8)
    x, y = eng.split.val.x, eng.split.val.y
    noise = eng.noise("A")
    a = eng.net.arch["normal"]

    def lossval():
        with T.no_grad():
            return T.cross_entropy(eng.net(Tensor(x), mode="relaxed", tau=2.0, noise=noise), y).item()

    a.grad = None
    T.cross_entropy(eng.net(Tensor(x), mode="relaxed", tau=2.0, noise=noise), y).backward()
    ana = a.grad.copy()
    num = numerical_grad(lossval, a.data, eps)
    return relative_error(ana, num)


def acceleration_equivalence(seed: int = 0, tau: float = 1.5, **kw) -> dict:
    """Compare accelerated and full hard passes under identical noise.

    Returns the forward loss gap, the max gap between accelerated dL/dA and
    the full-pass dL/dA recomputed with dL/dh masked to the argmax, and the
    op-evaluation counts of both passes.
    """
    eng = tiny_engine(seed, **kw)
    eng.net.arch["normal"].data = np.random.default_rng(seed).standard_normal(eng.net.arch["normal"].shape)
    x, y = eng.split.val.x, eng.split.val.y
    eng.iteration = 0
    eng.tau_schedule = sampler.TemperatureSchedule(1, tau, tau)
    eng.net.reset_op_evals()
    loss_full, _ = eng.accelerated_pass(x, y, mode="hard_sampled", retain=True)
    evals_full = eng.net.op_evals
    records = eng.net.records
    masked = {ct: np.zeros_like(t.data) for ct, t in eng.net.arch.tensors.items()}
    for rec in records:
        dh = rec.weights.grad
        soft = rec.soft.data
        m = np.argmax(rec.weights.data, axis=1)
        # Jacobian of softmax((A + o)/tau) contracted with the masked upstream
        for e in range(dh.shape[0]):
            g = dh[e, m[e]]
            s = soft[e]
            onehot = np.zeros_like(s)
            onehot[m[e]] = 1.0
            masked[rec.cell_type][e] += g * s[m[e]] * (onehot - s) / tau

    eng.net.reset_op_evals()
    loss_acc, grads_acc = eng.accelerated_pass(x, y, mode="accelerated")
    evals_acc = eng.net.op_evals
    grad_gap = max(float(np.max(np.abs(grads_acc[ct] - masked[ct]))) for ct in masked)
    return dict(loss_gap=abs(loss_full - loss_acc), grad_gap=grad_gap, evals_full=evals_full,
                evals_acc=evals_acc, K=eng.spec.K, loss=loss_acc)


def hard_vs_mixture_gap(seed: int = 0, B: int = 2) -> float:
    """|hard-sampled loss - explicit one-hot full-mixture loss| for the same noise."""
    eng = tiny_engine(seed, B=B, ops=("identity", "zeroize", "sep_conv_3x3", "max_pool_3x3"),
                      fixed_reduction=False)
    for t in eng.net.arch.tensors.values():
        t.data = np.random.default_rng(seed).standard_normal(t.shape)
    x, y = eng.split.train.x, eng.split.train.y
    noise = eng.noise("W")
    with T.no_grad():
        hard = T.cross_entropy(eng.net(Tensor(x), mode="hard_sampled", tau=1.0, noise=noise), y).item()
        per_cell = {rec.cell_index: rec.weights.data.copy() for rec in eng.net.records}
        masked = _forward_with_instance_weights(eng, x, per_cell)
        mixed = T.cross_entropy(masked, y).item()
    return abs(hard - mixed)


def _forward_with_instance_weights(eng: SearchEngine, x, per_cell: dict[int, np.ndarray]) -> Tensor:
    """Supernet forward where every search cell mixes all K candidates with given weights."""
    net = eng.net
    s = net.stem_bn(T.conv2d(Tensor(x), net.stem_w, padding=1))
    s0 = s1 = s
    for i, cell in enumerate(net.cells):
        if i in per_cell:
            out = cell.cell(s0, s1, weights=Tensor(per_cell[i]), mode="hard_sampled")
        else:
            out = cell.cell(s0, s1)
        s0, s1 = s1, out
    return T.linear(T.global_avg_pool(s1), net.fc_w, net.fc_b)


# ----------------------------------------------------------------------
# batch report for the CLI
# ----------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _run(name, fn) -> CheckResult:
    try:
        ok, detail = fn()
    except Exception as e:  # noqa: BLE001 - every failure is reported, none aborts the batch
        return CheckResult(name, False, f"{type(e).__name__}: {e}")
    return CheckResult(name, bool(ok), detail)


def run_validation(seed: int = 0, tau: float = 1.0, gradcheck_seeds: int = 5,
                   marginal_draws: int = 100_000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)

    def grads():
        fails = check_primitives(gradcheck_seeds)
        return not fails, f"{gradcheck_seeds} seeds, failures={fails[:3]}"

    def supernet_grad():
        err = relaxed_supernet_gradcheck(seed)
        return err < 1e-4, f"relative error {err:.2e}"

    def marginals():
        a = rng.standard_normal((5, 4))
        ps = [r.p_value for r in validate_marginals(a, marginal_draws, seed)]
        return min(ps) > 0.01 / len(ps), f"min p-value {min(ps):.3g} over {len(ps)} edges"

    def relaxation():
        a = rng.standard_normal((6, 5))
        o = sampler.gumbel_noise(rng, a.shape)
        hi = sampler.gumbel_softmax(a, o, 1e6).data
        lo = sampler.gumbel_softmax(a, o, 1e-3).data
        cur = sampler.gumbel_softmax(a, o, tau).data
        hard = sampler.gumbel_argmax(a, o)
        ok = (np.max(np.abs(hi - 1 / 5)) < 1e-4 and np.max(np.abs(lo - hard)) < 1e-6
              and np.allclose(cur.sum(axis=1), 1.0, atol=1e-12))
        return ok, f"tau={tau}"

    def acceleration():
        r = acceleration_equivalence(seed)
        ok = r["loss_gap"] <= 1e-12 and r["grad_gap"] <= 1e-10 and r["evals_full"] == r["K"] * r["evals_acc"]
        return ok, f"loss gap {r['loss_gap']:.1e}, grad gap {r['grad_gap']:.1e}, evals {r['evals_full']}/{r['evals_acc']}"

    def straight_through():
        gap = hard_vs_mixture_gap(seed)
        return gap <= 1e-12, f"hard vs one-hot mixture gap {gap:.1e}"

    return [
        _run("primitive_gradients", grads),
        _run("supernet_relaxed_gradient", supernet_grad),
        _run("gumbel_max_marginals", marginals),
        _run("relaxation_limits", relaxation),
        _run("straight_through_forward", straight_through),
        _run("acceleration_equivalence", acceleration),
    ]
