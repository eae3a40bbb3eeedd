import logging
import time
from pathlib import Path

import pytest

from gdas import config
from gdas.derive import derive_cell
from gdas.engine import run_search
from gdas.oracle import enumerate_cells, rank_all

ROOT = Path(__file__).resolve().parents[1]
BENCHMARK = ROOT / "configs" / "benchmark.yaml"
SEARCH_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def benchmark_cfg():
    return config.load(BENCHMARK)


@pytest.fixture(scope="session")
def benchmark_split(benchmark_cfg):
    return benchmark_cfg.make_split()


def _oracle(cfg, split, seed):
    cells = enumerate_cells(cfg.space_spec(), cap=cfg.oracle.cap)
    t0 = time.perf_counter()
    logging.disable(logging.WARNING)
    try:
        res = rank_all(cells, split, cfg.oracle_budget(), cfg.plan(), seed=seed)
    finally:
        logging.disable(logging.NOTSET)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def benchmark_oracle(benchmark_cfg, benchmark_split):
    """(EnumerationResult, seconds) under the configured seed."""
    return _oracle(benchmark_cfg, benchmark_split, benchmark_cfg.seed)


@pytest.fixture(scope="session")
def benchmark_oracle_alt(benchmark_cfg, benchmark_split):
    """Same enumeration under an independent initialization seed."""
    return _oracle(benchmark_cfg, benchmark_split, benchmark_cfg.seed + 1000)


@pytest.fixture(scope="session")
def benchmark_searches(benchmark_cfg, benchmark_split):
    """Per search seed: (derived normal cell, seconds)."""
    out = {}
    for seed in SEARCH_SEEDS:
        scfg = benchmark_cfg.search_config()
        scfg.seed = seed
        t0 = time.perf_counter()
        res = run_search(scfg, benchmark_split, benchmark_cfg.space_spec(), benchmark_cfg.plan())
        cell = derive_cell(res.arch, "normal", exclude_zeroize=benchmark_cfg.derive.exclude_zeroize)
        out[seed] = (cell, time.perf_counter() - t0)
    return out


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(capsys):
    """``criterion(n, ok, detail)`` records and prints one PASS/FAIL line."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        ACCEPTANCE[n] = line
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
