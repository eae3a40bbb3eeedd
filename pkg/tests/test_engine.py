import logging

import numpy as np
import pytest

from gdas import checks, sampler
from gdas.data import make_linear_toy, split_dataset
from gdas.derive import DerivedCell
from gdas.engine import (SGD, Adam, NonFiniteLossError, SearchConfig, SearchEngine, TrainConfig,
                         clip_grad_norm, cosine_lr, evaluate, frozen, run_search, train_network)
from gdas.network import NetworkPlan, build_network
from gdas.search_space import SearchSpaceSpec
from gdas.tensor import Tensor


def param(values, grad=None):
    p = Tensor(np.asarray(values, dtype=float), requires_grad=True)
    p.grad = None if grad is None else np.asarray(grad, dtype=float)
    return p


# ------------------------------------------------------------------ schedules


def test_cosine_lr_values():
    assert cosine_lr(0, 100) == pytest.approx(0.025)
    assert cosine_lr(100, 100) == pytest.approx(0.001)
    assert cosine_lr(50, 100) == pytest.approx(0.013)
    lrs = [cosine_lr(k, 40) for k in range(41)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


# ----------------------------------------------------------------- optimizers


def test_sgd_plain_step():
    p = param([1.0, -2.0], [0.5, 1.0])
    SGD([p], lr=0.1, momentum=0.0).step()
    np.testing.assert_allclose(p.data, [0.95, -2.1])


def test_sgd_momentum_and_decay_recurrence():
    p = param([1.0], [1.0])
    opt = SGD([p], lr=0.1, momentum=0.9, weight_decay=0.01)
    x, buf = 1.0, None
    for _ in range(5):
        p.grad = np.array([1.0])
        opt.step()
        buf = 1.0 if buf is None else 0.9 * buf + 1.0
        x = x - 0.1 * buf - 0.1 * 0.01 * x
        assert p.data[0] == pytest.approx(x, abs=1e-15)


def test_adam_first_step_is_lr_times_sign():
    p = param([0.0, 0.0], [3.0, -0.01])
    Adam([p], lr=0.1).step()
    np.testing.assert_allclose(p.data, [-0.1, 0.1], rtol=1e-6)


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    p = param(rng.standard_normal(3))
    opt = Adam([p], lr=0.01, betas=(0.5, 0.999), weight_decay=1e-3)
    x = p.data.copy()
    m = v = np.zeros(3)
    for t in range(1, 8):
        g = rng.standard_normal(3)
        p.grad = g
        opt.step()
        m = 0.5 * m + 0.5 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.01 * 1e-3 * x - 0.01 * (m / (1 - 0.5 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, x, rtol=1e-12)


@pytest.mark.parametrize("make", [lambda ps: SGD(ps, lr=0.0, weight_decay=0.1),
                                  lambda ps: Adam(ps, lr=0.0, weight_decay=0.1)])
def test_zero_lr_leaves_parameters_unchanged(make):
    p = param([1.0, 2.0], [5.0, -5.0])
    make([p]).step()
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_sgd_skips_params_without_grad():
    p = param([1.0])
    SGD([p], lr=1.0, weight_decay=0.5).step()
    assert p.data[0] == 1.0


def test_clip_grad_norm():
    p, q = param([0.0], [3.0]), param([0.0], [4.0])
    assert clip_grad_norm([p, q], 1.0) == pytest.approx(5.0)
    assert np.hypot(p.grad[0], q.grad[0]) == pytest.approx(1.0)
    assert clip_grad_norm([p, q], 10.0) == pytest.approx(1.0)


def test_frozen_restores_flags():
    p = param([1.0])
    with frozen([p]):
        assert not p.requires_grad
    assert p.requires_grad


# --------------------------------------------------------- alternating updates


def test_step_W_leaves_arch_untouched():
    eng = checks.tiny_engine(0)
    a_before = eng.net.arch["normal"].data.copy()
    w_before = [p.data.copy() for p in eng.w_params]
    tr = eng.split.train
    eng.step_W(tr.x, tr.y)
    np.testing.assert_array_equal(eng.net.arch["normal"].data, a_before)
    assert eng.net.arch["normal"].grad is None or not np.any(eng.net.arch["normal"].grad)
    assert any(not np.array_equal(p.data, b) for p, b in zip(eng.w_params, w_before))


def test_step_A_leaves_weights_untouched():
    eng = checks.tiny_engine(1)
    w_before = [p.data.copy() for p in eng.w_params]
    a_before = eng.net.arch["normal"].data.copy()
    va = eng.split.val
    eng.step_A(va.x, va.y)
    for p, b in zip(eng.w_params, w_before):
        np.testing.assert_array_equal(p.data, b)
    assert not np.array_equal(eng.net.arch["normal"].data, a_before)


def test_single_candidate_gives_zero_arch_gradient():
    eng = checks.tiny_engine(0, ops=("sep_conv_3x3",))
    va = eng.split.val
    _, grads = eng.accelerated_pass(va.x, va.y, mode="hard_sampled")
    assert not np.any(grads["normal"])


@pytest.mark.parametrize("seed", range(3))
def test_hard_forward_equals_one_hot_mixture(seed):
    assert checks.hard_vs_mixture_gap(seed) <= 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_acceleration_equivalence(seed):
    r = checks.acceleration_equivalence(seed)
    assert r["loss_gap"] <= 1e-12
    assert r["grad_gap"] <= 1e-10
    assert r["evals_full"] == r["K"] * r["evals_acc"]


def test_relaxed_supernet_gradient():
    assert checks.relaxed_supernet_gradcheck(0) < 1e-4


def test_non_finite_loss_raises():
    eng = checks.tiny_engine(0)
    eng.w_params[0].data = eng.w_params[0].data * np.nan
    with pytest.raises(NonFiniteLossError):
        eng.step_W(eng.split.train.x, eng.split.train.y)


def test_search_metrics_layout_and_determinism():
    def run():
        eng = checks.tiny_engine(3, epochs=2)
        return eng.run()

    a, b = run(), run()
    assert [m["split"] for m in a.metrics] == ["train", "val"] * 2
    assert a.metrics == b.metrics
    np.testing.assert_array_equal(a.arch["normal"].data, b.arch["normal"].data)
    assert len(a.snapshots) == 2 and a.snapshots[-1]["epoch"] == 2
    taus = [m["tau"] for m in a.metrics]
    assert taus[-1] == pytest.approx(0.1)


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(epochs=0)
    with pytest.raises(ValueError):
        SearchConfig(a_lr=-1)
    with pytest.raises(ValueError):
        SearchConfig(mode="gumbel")


def test_non_zeroize_probability_rises_when_the_task_needs_signal():
    """Two candidates per edge, zeroize first; the task is learnable only through the cell."""
    logging.disable(logging.WARNING)
    try:
        for seed in range(3):
            split = split_dataset(make_linear_toy(128, seed=seed), 0.5, seed=seed)
            plan = NetworkPlan(C=4, N=1, B=1)

            # exhaustive 2-architecture reference: all-zeroize vs all-identity
            losses = {}
            for op in ("zeroize", "identity"):
                cell = DerivedCell("normal", 1, 1, (((2, op),),))
                net = build_network(cell, "fixed", plan, seed=seed)
                train_network(net, split.train, TrainConfig(epochs=30, batch_size=16), seed=seed)
                losses[op] = evaluate(net, split.val)[0]
            assert losses["identity"] < losses["zeroize"]

            spec = SearchSpaceSpec(B=1, T=1, ops=("zeroize", "identity"))
            eng = SearchEngine(SearchConfig(epochs=50, batch_size=16, seed=seed, fixed_reduction_cell=True),
                               split, spec, plan)
            p0 = eng.net.arch.probabilities("normal")[:, 1].mean()
            tr, va = split.train, split.val
            for it in range(200):
                rng = sampler.rng_for(seed, "steps", it)
                bt = rng.choice(len(tr), 16, replace=False)
                bv = rng.choice(len(va), 16, replace=False)
                eng.step_W(tr.x[bt], tr.y[bt])
                eng.step_A(va.x[bv], va.y[bv])
                eng.iteration += 1
            assert eng.net.arch.probabilities("normal")[:, 1].mean() > p0
    finally:
        logging.disable(logging.NOTSET)


# ----------------------------------------------------------------- retraining


def test_train_history_rows_equal_epochs():
    ds = make_linear_toy(32, seed=1)
    cell = DerivedCell("normal", 1, 1, (((2, "identity"),),))
    net = build_network(cell, "fixed", NetworkPlan(C=2, B=1))
    hist = train_network(net, ds, TrainConfig(epochs=3, batch_size=16), eval_set=ds, eval_every_epoch=True)
    assert [r["epoch"] for r in hist] == [1, 2, 3]
    assert all("eval_loss" in r for r in hist)
    # two batches per epoch; the last update uses the rate of iteration 5 of 6
    assert hist[-1]["lr"] == pytest.approx(cosine_lr(5, 6))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_run_search_wrapper():
    split = split_dataset(make_linear_toy(16, seed=0), 0.5, seed=0)
    res = run_search(SearchConfig(epochs=1, batch_size=8, fixed_reduction_cell=True), split,
                     SearchSpaceSpec(B=1, T=1, ops=("identity", "max_pool_3x3")), NetworkPlan(C=2, B=1))
    assert len(res.metrics) == 2 and res.supernet is not None
