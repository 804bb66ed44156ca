import numpy as np
import pytest

from pdlms.data import generate_environment
from pdlms.engine import make_algorithm
from pdlms.network import NetworkTopology, build_uniform_combination, generate_topology
from pdlms.selection import SelectionSchedule


@pytest.fixture
def pair():
    """Two connected nodes."""
    return NetworkTopology.from_edges(2, [(0, 1)])


@pytest.fixture
def small_net():
    topo = generate_topology(5, 2, seed=3)
    env = generate_environment(topo, 4, 20.0, seed=5)
    return topo, env


def algorithm(topo, mode, scheme, L, links="noisy", mu=0.02, m=4, coupling=None):
    sched = SelectionSchedule(scheme, m, L, coupling)
    return make_algorithm(mode, build_uniform_combination(topo), sched,
                          np.full(topo.num_nodes, mu), links)


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
