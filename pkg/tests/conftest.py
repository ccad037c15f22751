import functools
from pathlib import Path

import numpy as np
import pytest

from wgeesel.simlab import load_scenarios, run_monte_carlo, simulate_dataset

ROOT = Path(__file__).resolve().parents[1]
SCENARIO_FILE = ROOT / "scenarios" / "table1.ini"

ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def scenarios():
    return {s.name: s for s in load_scenarios(SCENARIO_FILE)}


@functools.lru_cache(maxsize=None)
def mc_table(name):
    """Monte Carlo rate table for a shipped scenario, computed once per session."""
    return run_monte_carlo(scenarios()[name], n_jobs=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sim_dataset():
    sc = scenarios()["n100_m0.2"]
    return simulate_dataset(sc, sc.rng(0))
