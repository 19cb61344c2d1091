import numpy as np
import pytest

from mimoflow.netmodel import EffectiveGains, NetworkTopology, PhyParams, effective_gains
from mimoflow.scenarios import two_cell


def direct_gains(G, coupling, cell, budget):
    """Effective gains built by hand, bypassing the pilot model."""
    G = np.asarray(G, dtype=float)
    coupling = np.asarray(coupling, dtype=float)
    return EffectiveGains(G=G, q=np.zeros_like(G), cross=np.zeros_like(coupling),
                          coupling=coupling, cell=np.asarray(cell),
                          budget=np.asarray(budget, dtype=float))


def two_by_two(rng, budget=10.0, rho=1.0):
    topo = NetworkTopology(cell=[0, 0, 1, 1], gain=rng.uniform(1e-3, 1, (4, 2)),
                           pilot=[0, 1, 0, 1], budget=[budget, budget])
    return topo, effective_gains(topo, PhyParams(M=100, tau=2, rho=rho))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def twocell():
    return two_cell()


@pytest.fixture
def symmetric():
    # two cells, one location each, mirror-image gains on a shared pilot
    topo = NetworkTopology(cell=[0, 1], gain=[[1.0, 0.05], [0.05, 1.0]],
                           pilot=[0, 0], budget=[10.0, 10.0])
    return topo, effective_gains(topo, PhyParams(M=64, tau=1, rho=5.0))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
