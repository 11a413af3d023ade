import sys
from pathlib import Path

import numpy as np
import pytest

from specgraph.graph import Graph

DATA_DIR = Path(__file__).parent / "data"


def random_graph(rng, n_min=1, n_max=12, p=None, dims=1):
    n = int(rng.integers(n_min, n_max + 1))
    p = rng.uniform(0.1, 0.9) if p is None else p
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return Graph(n, np.column_stack([iu[keep], ju[keep]]), rng.normal(size=(n, dims)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path2():
    return Graph(2, [(0, 1)], [[1.0], [0.0]])


@pytest.fixture
def triangle():
    return Graph(3, [(0, 1), (1, 2), (0, 2)], [[1.0, 1.0], [1.0, -1.0], [1.0, 0.0]])


@pytest.fixture(scope="session")
def mutag_dir():
    return DATA_DIR / "MUTAG"


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
