import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimoflow.errors import TopologyError
from mimoflow.netmodel import (
    NetworkTopology,
    PhyParams,
    effective_gains,
    interference_denominator,
    nats_to_bits,
    path_gain,
    rate,
    sinr,
)
from mimoflow.oracle import sinr_bruteforce


def test_phy_validation():
    assert PhyParams(M=10).nu == 9
    with pytest.raises(TopologyError):
        PhyParams(M=1)
    with pytest.raises(TopologyError):
        PhyParams(tau=0)
    with pytest.raises(TopologyError):
        PhyParams(rho=-1.0)


def test_topology_rejects_bad_input():
    ok = dict(cell=[0, 1], gain=[[1, 0.1], [0.1, 1]], pilot=[0, 0], budget=[1, 1])
    NetworkTopology(**ok)
    with pytest.raises(TopologyError):
        NetworkTopology(**{**ok, "pilot": [0, 0], "cell": [0, 0]})
    with pytest.raises(TopologyError):
        NetworkTopology(**{**ok, "gain": [[1, 0], [0.1, 1]]})
    with pytest.raises(TopologyError):
        NetworkTopology(**{**ok, "budget": [1, 0]})
    with pytest.raises(TopologyError):
        NetworkTopology(**{**ok, "budget": [1, 1e-20]})
    with pytest.raises(TopologyError):
        NetworkTopology(**{**ok, "cell": [0, 2]})


def test_pilot_count_checked_against_tau():
    topo = NetworkTopology(cell=[0, 1], gain=[[1, 0.1], [0.1, 1]], pilot=[0, 1],
                           budget=[1, 1])
    with pytest.raises(TopologyError):
        effective_gains(topo, PhyParams(tau=1))
    effective_gains(topo, PhyParams(tau=2))


def test_topology_is_immutable():
    topo = NetworkTopology(cell=[0], gain=[[1.0]], pilot=[0], budget=[1.0])
    with pytest.raises(ValueError):
        topo.gain[0, 0] = 2.0


def test_twocell_gains(twocell):
    topo, phy, g = twocell
    near_cross = ((math.sqrt(3) * 1000 - 100) / 100) ** -2.5
    border = 10.0 ** -2.5
    expected = [[1.0, near_cross], [border, border], [near_cross, 1.0], [border, border]]
    assert np.allclose(topo.gain, expected, rtol=1e-12)
    assert near_cross == pytest.approx(9.30e-4, rel=1e-3)
    # closed forms: q sums the serving BS's gains to both users of a pilot
    tr = phy.tau * phy.rho
    G_near = 99 * tr / (1 + tr * (1 + near_cross))
    G_border = 99 * tr * border**2 / (1 + tr * 2 * border)
    assert np.allclose(g.G, [G_near, G_border, G_near, G_border], rtol=1e-12)
    assert G_near == pytest.approx(98.4164572, rel=1e-8)


def test_twocell_cross_gain_only_between_copilots(twocell):
    _, _, g = twocell
    mask = np.array([[0, 0, 1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]], bool)
    assert np.all(g.cross[~mask] == 0)
    assert np.all(g.cross[mask] > 0)


def test_single_user_sinr_closed_form():
    topo = NetworkTopology(cell=[0], gain=[[0.5]], pilot=[0], budget=[10.0])
    phy = PhyParams(M=11, tau=1, rho=2.0)
    g = effective_gains(topo, phy)
    G = 10 * 2 * 0.25 / (1 + 2 * 0.5)
    p = np.array([3.0])
    assert sinr(p, g, 0) == pytest.approx(3 * G / (1 + 0.5 * 3))
    assert rate(p, g, 0) == pytest.approx(math.log(1 + 3 * G / 2.5))
    assert interference_denominator(p, g)[0] == pytest.approx(2.5)


def test_power_validation(twocell):
    _, _, g = twocell
    with pytest.raises(ValueError):
        sinr(np.array([1.0, -1.0, 1.0, 1.0]), g)
    with pytest.raises(ValueError):
        sinr(np.ones(3), g)


def test_path_gain_and_units():
    assert path_gain(200.0, 2.5, 100.0) == pytest.approx(2 ** -2.5)
    with pytest.raises(TopologyError):
        path_gain(0.0)
    assert nats_to_bits(1.0) == pytest.approx(1 / math.log(2))
    assert nats_to_bits(math.log(2), 20e6) == pytest.approx(20e6)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), tau=st.integers(1, 3))
def test_sinr_matches_term_by_term_evaluation(seed, tau):
    rng = np.random.default_rng(seed)
    n_cells = 3
    cell = np.repeat(np.arange(n_cells), tau)
    pilot = np.tile(np.arange(tau), n_cells)
    topo = NetworkTopology(cell=cell, gain=rng.uniform(1e-3, 1, (cell.size, n_cells)),
                           pilot=pilot, budget=np.full(n_cells, 5.0))
    phy = PhyParams(M=int(rng.integers(2, 200)), tau=tau, rho=float(rng.uniform(0.1, 50)))
    g = effective_gains(topo, phy)
    p = rng.uniform(0, 5, cell.size)
    assert np.allclose(sinr(p, g), sinr_bruteforce(p, topo, phy), rtol=1e-12)
