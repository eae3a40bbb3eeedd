"""Gumbel-softmax differentiable cell search on a numpy autodiff core."""

from .derive import DerivedCell, derive_both, derive_cell, export_cell, import_cell
from .engine import SearchConfig, SearchEngine, TrainConfig, run_search, train_network
from .network import NetworkPlan, build_network
from .oracle import enumerate_cells, rank_all, validate_marginals
from .search_space import ArchParams, SearchSpaceSpec, Supernet, count_subgraphs, edge_list

__version__ = "0.1.0"

__all__ = [
    "ArchParams",
    "DerivedCell",
    "NetworkPlan",
    "SearchConfig",
    "SearchEngine",
    "SearchSpaceSpec",
    "Supernet",
    "TrainConfig",
    "build_network",
    "count_subgraphs",
    "derive_both",
    "derive_cell",
    "edge_list",
    "enumerate_cells",
    "export_cell",
    "import_cell",
    "rank_all",
    "run_search",
    "train_network",
    "validate_marginals",
]
