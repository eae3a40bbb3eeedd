import math

import numpy as np
import pytest
from reference import count_parameters

from gdas import tensor as T
from gdas.derive import DerivedCell
from gdas.engine import TrainConfig, evaluate, train_network
from gdas.network import NetworkPlan, build_network, fixed_reduction_cell
from gdas.ops import CANDIDATE_OPS, make_op, reduced, stride2_shape_adapter, validate_op_names
from gdas.search_space import (ArchParams, SearchSpaceSpec, Supernet, count_subgraphs, edge_list)
from gdas.tensor import ShapeError, Tensor

# ---------------------------------------------------------------- search space


@pytest.mark.parametrize("B,n", [(1, 2), (2, 5), (4, 14)])
def test_edge_list_sizes(B, n):
    edges = edge_list(SearchSpaceSpec(B=B, K=3))
    assert len(edges) == n
    assert edges == sorted(edges)
    assert all(1 <= j < i for i, j in edges)


def test_counts():
    assert count_subgraphs(SearchSpaceSpec(B=4, K=8, T=2)) == 3_019_898_880
    assert count_subgraphs(SearchSpaceSpec(B=1, K=1, T=2)) == 1
    assert count_subgraphs(SearchSpaceSpec(B=2, K=3, T=1)) == 54


def test_count_formula_by_product():
    for B in range(1, 5):
        for K in range(1, 9):
            for T_ in (1, 2):
                expect = math.prod(math.comb(i - 1, T_) * K ** T_ for i in range(3, B + 3))
                assert count_subgraphs(SearchSpaceSpec(B=B, K=K, T=T_)) == expect


def test_spec_validation():
    with pytest.raises(ValueError):
        SearchSpaceSpec(B=0, K=2)
    with pytest.raises(ValueError):
        SearchSpaceSpec(B=1, K=2, ops=("identity", "zeroize", "max_pool_3x3"))
    with pytest.raises(ValueError):
        SearchSpaceSpec(B=1, ops=("identity", "identity"))
    with pytest.raises(ValueError):
        validate_op_names(["conv_7x7"])
    with pytest.raises(ValueError):
        count_subgraphs(SearchSpaceSpec(B=1, K=2, T=3))


def test_arch_params_json_round_trip():
    spec = SearchSpaceSpec(B=2, K=3)
    a = ArchParams(spec, seed=4)
    b = ArchParams.from_json(a.to_json())
    for ct in a.cell_types:
        np.testing.assert_array_equal(a[ct].data, b[ct].data)
    np.testing.assert_allclose(a.probabilities("normal").sum(axis=1), 1.0)
    np.testing.assert_array_equal(a.edge_logits("normal", (4, 3)), a["normal"].data[-1])


# ------------------------------------------------------------------------ ops


@pytest.mark.parametrize("kind", CANDIDATE_OPS)
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("size", [4, 5, 8])
def test_op_output_shapes(kind, stride, size):
    op = make_op(kind, 4, 4, stride, affine=False, rng=np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).standard_normal((2, 4, size, size)))
    out = op(x)
    assert out.shape == (2, 4, reduced(size, stride), reduced(size, stride)) == op.output_shape(x.shape)


def test_zeroize_gives_zero_and_zero_gradient():
    x = Tensor(np.ones((1, 2, 4, 4)), requires_grad=True)
    op = make_op("zeroize", 2, 2, 1, False, np.random.default_rng(0))
    y = op(x)
    assert not np.any(y.data)
    T.sum(T.scale(y, 3.0)).backward()
    assert not np.any(x.grad)


def test_parametric_op_channel_mismatch_rejected():
    with pytest.raises(ShapeError):
        make_op("identity", 2, 4, 1, False, np.random.default_rng(0))
    op = make_op("sep_conv_3x3", 2, 2, 1, False, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        op(Tensor(np.ones((1, 3, 4, 4))))
    with pytest.raises(ValueError):
        make_op("sep_conv_3x3", 2, 2, 3, False, np.random.default_rng(0))


def test_stride2_adapter_halves():
    x = Tensor(np.ones((1, 4, 8, 8)))
    for kind in CANDIDATE_OPS:
        assert stride2_shape_adapter(kind, x).shape == (1, 4, 4, 4)


# -------------------------------------------------------------------- network


def tiny_cell(op="sep_conv_3x3"):
    return DerivedCell("normal", 2, 1, (((2, op),), ((1, "identity"),)))


def test_forward_shapes_follow_halving_doubling_law():
    plan = NetworkPlan(C=4, N=2, B=2)
    net = build_network(tiny_cell(), "fixed", plan)
    feats = net.features(Tensor(np.random.default_rng(0).standard_normal((3, 1, 8, 8))))
    expect = [(3, 12, 8, 8)] + [(3, 8, 8, 8)] * 2 + [(3, 16, 4, 4)] * 3 + [(3, 32, 2, 2)] * 3
    assert [f.shape for f in feats] == expect


def test_layout_channels_double_at_reductions():
    plan = NetworkPlan(C=3, N=1, B=2)
    lay = plan.layout()
    assert [d["reduction"] for d in lay] == [False, True, False, True, False]
    assert [d["c"] for d in lay] == [3, 6, 6, 12, 12]
    assert [d["c_out"] for d in lay] == [6, 12, 12, 24, 24]


def test_fixed_reduction_cell_shapes_and_padding_rule():
    frc = fixed_reduction_cell(4, 8)
    for size, out in [(8, 4), (5, 3), (4, 2)]:
        assert frc(Tensor(np.ones((2, 4, size, size)))).shape == (2, 8, out, out)
    with pytest.raises(ShapeError):
        frc(Tensor(np.ones((1, 3, 8, 8))))
    with pytest.raises(ValueError):
        fixed_reduction_cell(0, 4)


@pytest.mark.parametrize("op", ["sep_conv_3x3", "identity", "max_pool_3x3", "zeroize"])
def test_parameter_count_matches_hand_count(op):
    cell = tiny_cell(op)
    for C, N in [(2, 1), (4, 1), (4, 2)]:
        net = build_network(cell, "fixed", NetworkPlan(C=C, N=N, B=2))
        assert net.num_parameters() == count_parameters(cell.nodes, C, N, 2)


def test_doubling_C_roughly_quadruples_parameters():
    cell = tiny_cell()
    small = build_network(cell, "fixed", NetworkPlan(C=8, B=2)).num_parameters()
    big = build_network(cell, "fixed", NetworkPlan(C=16, B=2)).num_parameters()
    assert 3.0 < big / small < 4.5


def test_derived_reduction_cell_network():
    red = DerivedCell("reduction", 2, 1, (((1, "max_pool_3x3"),), ((3, "sep_conv_3x3"),)))
    net = build_network(tiny_cell(), red, NetworkPlan(C=2, B=2))
    assert net(Tensor(np.zeros((2, 1, 8, 8)))).shape == (2, 4)


def test_cell_B_must_match_plan():
    with pytest.raises(ShapeError):
        build_network(tiny_cell(), "fixed", NetworkPlan(C=2, B=3))


def test_all_zeroize_node_warns_and_runs(caplog):
    cell = DerivedCell("normal", 2, 1, (((1, "zeroize"),), ((3, "identity"),)))
    with caplog.at_level("WARNING"):
        net = build_network(cell, "fixed", NetworkPlan(C=2, B=2))
    assert "zeroize" in caplog.text
    assert np.all(np.isfinite(net(Tensor(np.ones((2, 1, 8, 8)))).data))


def test_toy_task_reaches_high_train_accuracy():
    from gdas.data import make_linear_toy

    ds = make_linear_toy(64, seed=0)
    net = build_network(tiny_cell(), "fixed", NetworkPlan(C=4, B=2), seed=0)
    hist = train_network(net, ds, TrainConfig(epochs=100, batch_size=16), seed=0)
    assert len(hist) == 100
    assert max(r["train_acc"] for r in hist) >= 0.95
    assert evaluate(net, ds)[1] >= 0.95


# -------------------------------------------------------------------- supernet


def test_frc_drops_reduction_arch_params():
    spec = SearchSpaceSpec(B=2, K=3)
    plan = NetworkPlan(C=2, B=2)
    full = Supernet(spec, plan, fixed_reduction=False)
    frc = Supernet(spec, plan, fixed_reduction=True)
    assert full.arch.num_parameters() == 2 * spec.num_edges * spec.K
    assert frc.arch.num_parameters() == spec.num_edges * spec.K
    assert frc.arch.cell_types == ("normal",)


def test_supernet_modes_agree_on_output_shape():
    spec = SearchSpaceSpec(B=2, ops=("identity", "sep_conv_3x3", "max_pool_3x3"))
    net = Supernet(spec, NetworkPlan(C=2, B=2), fixed_reduction=True)
    x = Tensor(np.random.default_rng(0).standard_normal((2, 1, 8, 8)))
    noise = lambda i, e, k: np.zeros((e, k))  # noqa: E731
    for mode in ("hard_sampled", "relaxed", "accelerated"):
        assert net(x, mode=mode, noise=noise).shape == (2, 4)
    with pytest.raises(ValueError):
        net(x, mode="soft")


def test_supernet_plan_mismatch():
    with pytest.raises(ValueError):
        Supernet(SearchSpaceSpec(B=2, K=2), NetworkPlan(B=3))
