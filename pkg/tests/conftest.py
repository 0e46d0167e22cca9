import os
import sys
import warnings
from pathlib import Path

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

hypothesis.settings.register_profile("default", deadline=None, max_examples=100)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

warnings.filterwarnings("ignore", message="The given NumPy array is not writable")
warnings.filterwarnings("ignore", message="Sparse invariant checks")

REPO = Path(__file__).resolve().parents[1]


def data_root() -> Path:
    return Path(os.environ.get("SSCDL_DATA_ROOT", REPO / "data"))


@pytest.fixture(scope="session")
def mutag_root():
    root = data_root()
    if not (root / "MUTAG" / "MUTAG_A.txt").exists():
        pytest.skip("MUTAG not available; set SSCDL_DATA_ROOT")
    return root


def random_graph(rng, n_min=1, n_max=9, d=4, label=None, graph_id=0, p=0.35):
    from sscdl.graph import Graph

    n = int(rng.integers(n_min, n_max + 1))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return Graph(rng.standard_normal((n, d)), edges, label=label, graph_id=graph_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
