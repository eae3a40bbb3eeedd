"""Independent references used by the tests: hand-counted parameter totals and a
brute-force cell derivation that never calls the library's selection code."""

import itertools
from fractions import Fraction

import numpy as np

from gdas.derive import DerivedCell
from gdas.search_space import ArchParams, SearchSpaceSpec, edge_index


def _bn(c, affine=True):
    return 2 * c if affine else 0


def _op(kind, c, stride):
    if kind == "identity":
        return 0 if stride == 1 else c * (c // 2) + c * (c - c // 2) + _bn(c)
    if kind in ("zeroize", "avg_pool_3x3", "max_pool_3x3"):
        return 0
    k = {"sep_conv_3x3": 3, "dil_sep_conv_3x3": 3, "sep_conv_5x5": 5, "dil_sep_conv_5x5": 5}[kind]
    return c * k * k + c * c + _bn(c)


def _frc(c_in, c_out):
    return 2 * (c_in * c_in * 3) + 2 * _bn(c_in) + c_out * 2 * c_in + _bn(c_out)


def count_parameters(nodes, C, N, B, num_classes=4, in_channels=1, stem_multiplier=3):
    """``nodes`` in DerivedCell form; reduction cells are the fixed reducer."""
    stem = stem_multiplier * C
    total = stem * in_channels * 9 + _bn(stem)
    c_pp = c_p = stem
    c = C
    prev_red = False
    for block in range(3):
        if block:
            c *= 2
            total += _frc(c_p, B * c)
            c_pp, c_p, prev_red = c_p, B * c, True
        for _ in range(N):
            if prev_red:
                total += c_pp * (c // 2) + c_pp * (c - c // 2) + _bn(c)
            else:
                total += c_pp * c + _bn(c)
            total += c_p * c + _bn(c)
            total += sum(_op(kind, c, 1) for node in nodes for _, kind in node)
            c_pp, c_p, prev_red = c_p, B * c, False
    return total + num_classes * c_p + num_classes


def brute_force_derive(probs: np.ndarray, spec: SearchSpaceSpec, omega: list[int]) -> DerivedCell:
    """Score every (sources, ops) choice per node by the exact product of probabilities.

    Among maximal choices pick the lexicographically smallest (sources, op indices).
    """
    eidx = edge_index(spec)
    nodes = []
    for i in range(3, spec.B + 3):
        best_key, best = None, None
        for srcs in itertools.combinations(range(1, i), spec.T):
            for ks in itertools.product(omega, repeat=spec.T):
                score = Fraction(1)
                for j, k in zip(srcs, ks):
                    score *= Fraction(float(probs[eidx[(i, j)], k]))
                key = (-score, srcs, ks)
                if best_key is None or key < best_key:
                    best_key, best = key, tuple((j, spec.ops[k]) for j, k in zip(srcs, ks))
        nodes.append(best)
    return DerivedCell("normal", spec.B, spec.T, tuple(nodes))


def random_instance(rng: np.random.Generator):
    B = int(rng.integers(1, 4))
    K = int(rng.integers(1, 5))
    T = int(rng.integers(1, 3))
    spec = SearchSpaceSpec(B=B, K=K, T=T)
    params = ArchParams(spec, ("normal",))
    # a coarse grid makes exact ties between edges and candidates common
    params["normal"].data = rng.choice([-1.0, 0.0, 0.0, 1.0, 2.0], size=params["normal"].shape)
    return spec, params
