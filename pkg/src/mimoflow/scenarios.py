"""
Built-in scenarios.

``two-cell`` is a two-cell hexagonal layout: base stations one
inter-site distance apart (``sqrt(3)`` cell radii), one location 100 m
from each base station and one border location per cell at a shared
hexagon vertex, equidistant from both base stations. Near locations use
pilot 0 and border locations pilot 1, so the two border locations
contaminate each other as do the two near ones. Gains are normalised to
1 at the 100 m reference distance.
"""

import math

from .netmodel import PhyParams, effective_gains, topology_from_positions

__all__ = ["two_cell_layout", "two_cell", "SCENARIOS"]

CELL_RADIUS = 1000.0
REFERENCE_DISTANCE = 100.0
PATH_LOSS_EXPONENT = 2.5
BANDWIDTH = 20e6
FLOW_SIZE_BITS = 1e6


def two_cell_layout(radius=CELL_RADIUS, near=REFERENCE_DISTANCE):
    """Base-station and location coordinates in metres."""
    d = math.sqrt(3.0) * radius
    bs = [(0.0, 0.0), (d, 0.0)]
    locs = [
        (near, 0.0),
        (d / 2, radius / 2),
        (d - near, 0.0),
        (d / 2, -radius / 2),
    ]
    return {
        "bs_xy": bs,
        "loc_xy": locs,
        "cell": [0, 0, 1, 1],
        "pilot": [0, 1, 0, 1],
        "names": ("near1", "border1", "near2", "border2"),
    }


def two_cell(budget=100.0, M=100, tau=2, rho=100.0):
    """Topology, physical parameters and effective gains of the layout."""
    lay = two_cell_layout()
    topo = topology_from_positions(
        lay["bs_xy"], lay["loc_xy"], cell=lay["cell"], pilot=lay["pilot"],
        budget=[budget, budget], exponent=PATH_LOSS_EXPONENT,
        reference=REFERENCE_DISTANCE, names=lay["names"],
    )
    phy = PhyParams(M=M, tau=tau, rho=rho)
    return topo, phy, effective_gains(topo, phy)


SCENARIOS = {"two-cell": two_cell_layout}
