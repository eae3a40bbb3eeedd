"""Exhaustive ground truth on tiny search spaces."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import sampler
from .data import SplitDataset
from .derive import DerivedCell, export_cell
from .engine import NonFiniteLossError, TrainConfig, evaluate, train_network
from .network import NetworkPlan, build_network
from .search_space import SearchSpaceSpec, count_subgraphs

logger = logging.getLogger(__name__)

DEFAULT_CAP = 10_000


class EnumerationTooLarge(ValueError):
    pass


def enumerate_cells(spec: SearchSpaceSpec, cell_type: str = "normal", cap: int = DEFAULT_CAP) -> list[DerivedCell]:
    """Every derivable cell of ``spec`` in a fixed order (node 3 varies slowest)."""
    n = count_subgraphs(spec)
    if n > cap:
        raise EnumerationTooLarge(
            f"{n} cells exceed the enumeration cap of {cap}; use a smaller B, K or T")
    per_node = []
    for i in range(3, spec.B + 3):
        choices = []
        for srcs in itertools.combinations(range(1, i), spec.T):
            for ops in itertools.product(spec.ops, repeat=spec.T):
                choices.append(tuple(zip(srcs, ops)))
        per_node.append(choices)
    return [DerivedCell(cell_type, spec.B, spec.T, nodes) for nodes in itertools.product(*per_node)]


@dataclass
class OracleEntry:
    cell_id: int
    cell: DerivedCell
    val_loss: float
    val_acc: float
    train_loss: float
    diverged: bool = False
    rank: int = 0


@dataclass
class EnumerationResult:
    entries: list[OracleEntry]  # sorted by rank

    def __len__(self) -> int:
        return len(self.entries)

    def rank_of(self, cell: DerivedCell) -> int:
        for e in self.entries:
            if e.cell == cell:
                return e.rank
        raise KeyError("cell not in enumeration")

    def by_id(self) -> list[OracleEntry]:
        return sorted(self.entries, key=lambda e: e.cell_id)

    def in_top_fraction(self, cell: DerivedCell, fraction: float = 0.25) -> bool:
        return self.rank_of(cell) <= fraction * len(self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell_id", "cell_json", "val_loss", "val_acc", "rank"])
        for e in self.entries:
            cj = json.dumps(e.cell.to_dict(), separators=(",", ":"))
            w.writerow([e.cell_id, cj, repr(e.val_loss), repr(e.val_acc), e.rank])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EnumerationResult":
        rows = list(csv.DictReader(io.StringIO(text)))
        entries = [OracleEntry(int(r["cell_id"]), DerivedCell.from_dict(json.loads(r["cell_json"])),
                               float(r["val_loss"]), float(r["val_acc"]), float("nan"),
                               rank=int(r["rank"])) for r in rows]
        return cls(sorted(entries, key=lambda e: e.rank))


def _train_one(args) -> OracleEntry:
    cell_id, cell, split, plan, budget, seed = args
    net = build_network(cell, "fixed", plan, affine=True, seed=seed)
    try:
        hist = train_network(net, split.train, budget, seed=seed)
        vl, va = evaluate(net, split.val)
        if not np.isfinite(vl):
            raise NonFiniteLossError("non-finite validation loss")
        return OracleEntry(cell_id, cell, vl, va, hist[-1]["train_loss"])
    except NonFiniteLossError as e:
        logger.warning("cell %d diverged: %s", cell_id, e)
        return OracleEntry(cell_id, cell, float("inf"), 0.0, float("inf"), diverged=True)


def rank_all(cells: list[DerivedCell], split: SplitDataset, budget: TrainConfig, plan: NetworkPlan,
             seed: int = 0, workers: int = 1, progress=None) -> EnumerationResult:
    """Train every cell from the same init seed on the training split; rank by validation loss.

    The reduction cells of every network are the fixed reducer, so only the
    enumerated normal cell differs between entries.
    """
    init_seed = sampler.derive_seed(seed, "oracle-init") % (2 ** 32)
    jobs = [(i, c, split, plan, budget, init_seed) for i, c in enumerate(cells)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            entries = list(ex.map(_train_one, jobs))
    else:
        entries = []
        for job in jobs:
            entries.append(_train_one(job))
            if progress:
                progress(entries[-1])
    entries.sort(key=lambda e: (e.val_loss, e.cell_id))
    for r, e in enumerate(entries, start=1):
        e.rank = r
    return EnumerationResult(entries)


@dataclass
class MarginalReport:
    edge: int
    counts: np.ndarray
    expected: np.ndarray
    chi2: float
    dof: int
    p_value: float

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def chi_square(counts: np.ndarray, probs: np.ndarray) -> tuple[float, int, float]:
    """Pearson statistic with categories of expected count < 5 pooled."""
    n = counts.sum()
    expected = probs * n
    big = expected >= 5
    obs = list(counts[big])
    exp = list(expected[big])
    if (~big).any():
        obs.append(counts[~big].sum())
        exp.append(expected[~big].sum())
    obs, exp = np.asarray(obs, dtype=float), np.asarray(exp, dtype=float)
    keep = exp > 0
    stat = float(np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep]))
    if (obs[~keep] > 0).any():
        return float("inf"), max(len(obs) - 1, 1), 0.0
    dof = int(keep.sum()) - 1
    if dof < 1:
        return 0.0, 0, 1.0
    return stat, dof, float(stats.chi2.sf(stat, dof))


def validate_marginals(a, draws: int = 100_000, seed: int = 0, min_draws: int = 10_000) -> list[MarginalReport]:
    """Compare Gumbel-Max selection frequencies with softmax(A), edge by edge."""
    if draws < min_draws:
        raise ValueError(f"need at least {min_draws} draws, got {draws}")
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    probs = sampler.edge_probabilities(a)
    rng = sampler.rng_for(seed, "marginals")
    reports = []
    for e in range(a.shape[0]):
        noise = sampler.gumbel_noise(rng, (draws, a.shape[1]))
        picks = np.argmax(a[e] + noise, axis=1)
        counts = np.bincount(picks, minlength=a.shape[1]).astype(float)
        chi2, dof, p = chi_square(counts, probs[e])
        reports.append(MarginalReport(e, counts, probs[e] * draws, chi2, dof, p))
    return reports


def export_entry(entry: OracleEntry) -> str:
    return export_cell(entry.cell, "json")
