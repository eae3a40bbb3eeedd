"""The ten acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS/FAIL criterion N: ...`` line; the lines are
repeated in the terminal summary.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from reference import brute_force_derive, random_instance

from gdas import checks, sampler
from gdas.cli import main
from gdas.derive import derive_cell
from gdas.network import NetworkPlan
from gdas.oracle import enumerate_cells, validate_marginals
from gdas.search_space import SearchSpaceSpec, Supernet, count_subgraphs
from gdas.tensor import Tensor

ROOT = Path(__file__).resolve().parents[1]


def test_criterion_1_finite_difference_gradients(criterion):
    t0 = time.perf_counter()
    cases = worst = 0
    failures = []
    for seed in range(100):
        for name, fn, inputs in checks.primitive_cases(seed):
            err = checks.gradcheck(fn, inputs, seed=seed)
            cases += 1
            worst = max(worst, err)
            if not err < 1e-4:
                failures.append((name, seed, err))
    secs = time.perf_counter() - t0
    ok = not failures and cases >= 100 and secs < 120
    assert criterion(1, ok, f"{cases} randomized cases over 100 seeds, max rel err {worst:.2e} "
                            f"(< 1e-4), {secs:.1f}s (< 120s), failures {failures[:3]}")


def test_criterion_2_gumbel_max_chi_square(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    ps = []
    for i in range(20):
        a = rng.normal(0.0, 1.5, int(rng.integers(2, 9)))
        (rep,) = validate_marginals(a, 100_000, seed=i)
        ps.append(rep.p_value)
    secs = time.perf_counter() - t0
    low = [(i, round(p, 4)) for i, p in enumerate(ps) if not p > 0.01]
    ok = not low and secs < 60
    assert criterion(2, ok, f"20 random A x 1e5 draws, min p {min(ps):.4f} (> 0.01), "
                            f"below threshold {low}, {secs:.1f}s (< 60s)")


def test_criterion_3_relaxation_limits(criterion):
    rng = np.random.default_rng(3)
    worst_hi = worst_lo = 0.0
    argmax_ok = True
    n = 0
    while n < 200:
        k = int(rng.integers(2, 9))
        a = rng.normal(0.0, 2.0, k)
        o = sampler.gumbel_noise(rng, k)
        logits = np.log(sampler.edge_probabilities(a)) + o
        top2 = np.sort(logits)[-2:]
        if top2[1] - top2[0] < 0.02:
            # at tau=1e-3 a gap g leaves a residue of up to (K-1)exp(-g/tau); such
            # near-ties are a property of the draw, not of the relaxation
            continue
        hard = sampler.gumbel_argmax(a, o)
        worst_hi = max(worst_hi, float(np.max(np.abs(sampler.gumbel_softmax(a, o, 1e6).data - 1.0 / k))))
        worst_lo = max(worst_lo, float(np.max(np.abs(sampler.gumbel_softmax(a, o, 1e-3).data - hard))))
        for tau in np.geomspace(10, 0.1, 25):
            argmax_ok &= int(np.argmax(sampler.gumbel_softmax(a, o, tau).data)) == int(np.argmax(hard))
        n += 1
    ok = worst_hi < 1e-4 and worst_lo < 1e-6 and argmax_ok
    assert criterion(3, ok, f"200 draws: |tau=1e6 - 1/K| max {worst_hi:.1e} (< 1e-4), "
                            f"|tau=1e-3 - onehot| max {worst_lo:.1e} (< 1e-6), "
                            f"argmax invariant over tau in [0.1, 10]: {argmax_ok}")


def test_criterion_4_hard_loss_equals_masked_mixture(criterion):
    gaps = [checks.hard_vs_mixture_gap(seed) for seed in range(50)]
    ok = max(gaps) <= 1e-12
    assert criterion(4, ok, f"50 seeds, max |hard - one-hot mixture| {max(gaps):.1e} (<= 1e-12)")


def test_criterion_5_acceleration(criterion):
    loss_gap = grad_gap = 0.0
    ratio_ok = True
    ratios = set()
    runs = [dict(ops=("identity", "zeroize", "sep_conv_3x3")),
            dict(ops=("identity", "max_pool_3x3")),
            dict(ops=("identity", "zeroize", "sep_conv_3x3", "avg_pool_3x3")),
            dict(ops=("identity", "zeroize", "sep_conv_3x3"), fixed_reduction=False)]
    for seed in range(10):
        r = checks.acceleration_equivalence(seed, **runs[seed % len(runs)])
        loss_gap = max(loss_gap, r["loss_gap"])
        grad_gap = max(grad_gap, r["grad_gap"])
        ratio_ok &= r["evals_full"] == r["K"] * r["evals_acc"]
        ratios.add((r["K"], r["evals_full"], r["evals_acc"]))
    ok = loss_gap <= 1e-12 and grad_gap <= 1e-10 and ratio_ok
    assert criterion(5, ok, f"10 seeds, loss gap {loss_gap:.1e} (<= 1e-12), grad gap {grad_gap:.1e} "
                            f"(<= 1e-10), evals drop exactly K-fold: {ratio_ok} {sorted(ratios)}")


def test_criterion_6_derive_matches_brute_force(criterion):
    rng = np.random.default_rng(6)
    agree = ties = 0
    for _ in range(1000):
        spec, params = random_instance(rng)
        probs = sampler.edge_probabilities(params["normal"])
        ties += int(len(np.unique(probs.max(axis=1))) < probs.shape[0])
        agree += derive_cell(params) == brute_force_derive(probs, spec, list(range(spec.K)))
    ok = agree == 1000
    assert criterion(6, ok, f"{agree}/1000 instances agree (B<=3, K<=4, {ties} with tied importances)")


def test_criterion_7_counts(criterion):
    big = count_subgraphs(SearchSpaceSpec(B=4, K=8, T=2))
    mismatches = []
    checked = 0
    for B in range(1, 4):
        for K in range(1, 5):
            for T_ in (1, 2):
                spec = SearchSpaceSpec(B=B, K=K, T=T_)
                if count_subgraphs(spec) > 10_000:
                    continue
                cells = enumerate_cells(spec)
                checked += 1
                if not len(cells) == len(set(cells)) == count_subgraphs(spec):
                    mismatches.append((B, K, T_))
    ok = big == 3_019_898_880 and not mismatches
    assert criterion(7, ok, f"count(B=4,K=8,T=2) = {big:,}; enumeration = formula on {checked} specs, "
                            f"mismatches {mismatches}")


@pytest.mark.slow
def test_criterion_8_search_lands_in_oracle_top_quartile(criterion, benchmark_oracle, benchmark_searches):
    oracle, oracle_secs = benchmark_oracle
    ranks = {seed: oracle.rank_of(cell) for seed, (cell, _) in benchmark_searches.items()}
    search_secs = sum(s for _, s in benchmark_searches.values())
    quartile = len(oracle) / 4
    hits = sum(r <= quartile for r in ranks.values())
    total = oracle_secs + search_secs
    ok = len(oracle) == 54 and hits >= 4 and total < 1800
    assert criterion(8, ok, f"ranks per seed {ranks} of {len(oracle)}, {hits}/5 in top quartile (need 4), "
                            f"oracle {oracle_secs:.0f}s + search {search_secs:.0f}s = {total:.0f}s (< 1800s)")


def test_criterion_9_metrics_byte_identical(criterion, tmp_path):
    out = tmp_path / "run"
    blobs = []
    for _ in range(2):
        code = main(["search", "-c", str(ROOT / "configs" / "smoke.yaml"), "-o", str(out), "--no-figures",
                     "--epochs", "3"])
        assert code == 0
        blobs.append((out / "metrics.csv").read_bytes())
    ok = blobs[0] == blobs[1] and len(blobs[0]) > 0
    assert criterion(9, ok, f"two runs, metrics.csv {len(blobs[0])} bytes, identical: {blobs[0] == blobs[1]}")


def test_criterion_10_fixed_reduction_cell(criterion):
    details = []
    ok = True
    for B, ops in [(2, ("identity", "sep_conv_3x3", "max_pool_3x3")), (3, ("identity", "zeroize")),
                   (4, ("identity", "zeroize", "sep_conv_3x3", "avg_pool_3x3"))]:
        spec = SearchSpaceSpec(B=B, ops=ops)
        plan = NetworkPlan(C=2, N=1, B=B)
        full = Supernet(spec, plan, fixed_reduction=False)
        frc = Supernet(spec, plan, fixed_reduction=True)
        reduction_share = full.arch["reduction"].size
        drop = full.arch.num_parameters() - frc.arch.num_parameters()
        ok &= drop == reduction_share == spec.num_edges * spec.K
        x = Tensor(np.random.default_rng(B).standard_normal((2, 1, 8, 8)))
        noise = lambda i, e, k: sampler.noise_for(0, 0, i, e, k)  # noqa: E731
        shapes = [f.shape for f in frc.sampled_features(x, noise=noise)]
        expect = [(2, 3 * plan.C, 8, 8)]
        c, size = plan.C, 8
        for red in plan.reduction_flags():
            if red:
                c, size = 2 * c, (size + 1) // 2
            expect.append((2, B * c, size, size))
        ok &= shapes == expect
        details.append(f"B={B}: A params {full.arch.num_parameters()} -> {frc.arch.num_parameters()} "
                       f"(drop {drop} = reduction share {reduction_share}), shapes ok {shapes == expect}")
    assert criterion(10, ok, "; ".join(details))
