import math

import numpy as np
import pytest

from qgraph_qe.edge_ode import Potential
from qgraph_qe.graph_core import generate_graph
from qgraph_qe.tree_spectral import TreeModel, find_bands

THETA2 = math.acos(2 * math.sqrt(2) / 3)  # band-edge angle for q = 2


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""
    lines = request.config._acceptance_lines

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


@pytest.fixture(scope="session")
def free_model():
    return TreeModel(2)


@pytest.fixture(scope="session")
def free_band(free_model):
    return find_bands(free_model, (0.01, 9.0)).bands[0]


@pytest.fixture(scope="session")
def cos_model():
    return TreeModel(2, 0.5, Potential.closed("cos", grid_n=256))


@pytest.fixture(scope="session")
def cos_band(cos_model):
    return find_bands(cos_model, (0.01, 9.0)).bands[0]


@pytest.fixture(scope="session")
def k4():
    return generate_graph("complete", 4, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
