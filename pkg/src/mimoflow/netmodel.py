"""
Physical-layer abstraction of the multi-cell massive-MIMO downlink.

Locations are indexed globally ``0..N-1``; each belongs to exactly one
cell, whose base station serves it. Powers are expressed in units of the
receiver noise power, so every SINR denominator starts at 1.

The effective SINR of location ``k`` under conjugate beamforming with
pilot contamination is::

    sinr_k = p_k G_k / (1 + sum_i A[k, i] p_i)

where ``A[k, i] = g[k, cell(i)] + Gx[k, i]``: the first term is the
large-scale gain from location ``k`` to the base station transmitting to
``i`` and the second is the coherent leakage through that base station's
contaminated channel estimate, non-zero only when ``i`` shares ``k``'s
pilot and sits in another cell.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import TopologyError

__all__ = [
    "PhyParams",
    "NetworkTopology",
    "EffectiveGains",
    "effective_gains",
    "path_gain",
    "topology_from_positions",
    "interference_denominator",
    "sinr",
    "rate",
    "nats_to_bits",
]


@dataclass(frozen=True)
class PhyParams:
    """Antenna count ``M``, pilot length ``tau`` and pilot SNR ``rho``."""

    M: int = 100
    tau: int = 1
    rho: float = 1.0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise TopologyError("M must be an integer >= 2")
        if int(self.tau) != self.tau or self.tau < 1:
            raise TopologyError("tau must be an integer >= 1")
        if not np.isfinite(self.rho) or self.rho <= 0:
            raise TopologyError("rho must be positive and finite")

    @property
    def nu(self):
        return self.M - 1


@dataclass(frozen=True, eq=False)
class NetworkTopology:
    """Cells, user locations, large-scale gains, pilots and power budgets.

    Parameters
    ----------
    cell : array of int, shape (N,)
        Serving cell of each location.
    gain : array of float, shape (N, L)
        Linear large-scale power gain between location ``k`` and the base
        station of cell ``j``.
    pilot : array of int, shape (N,)
        Pilot index of each location, ``0 <= pilot < tau``.
    budget : array of float, shape (L,)
        Maximum total downlink power of each base station.
    """

    cell: np.ndarray
    gain: np.ndarray
    pilot: np.ndarray
    budget: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        cell = np.asarray(self.cell, dtype=np.int64)
        gain = np.asarray(self.gain, dtype=float)
        pilot = np.asarray(self.pilot, dtype=np.int64)
        budget = np.asarray(self.budget, dtype=float)
        if gain.ndim != 2:
            raise TopologyError("gain must be a 2-D array (locations x cells)")
        n, n_cells = gain.shape
        if n == 0 or n_cells == 0:
            raise TopologyError("topology needs at least one cell and one location")
        if cell.shape != (n,) or pilot.shape != (n,):
            raise TopologyError("cell and pilot must have one entry per location")
        if budget.shape != (n_cells,):
            raise TopologyError("budget must have one entry per cell")
        if cell.min() < 0 or cell.max() >= n_cells:
            raise TopologyError("cell index out of range")
        if not np.all(np.isfinite(gain)) or np.any(gain <= 0):
            raise TopologyError("gain values must be strictly positive and finite")
        if not np.all(np.isfinite(budget)) or np.any(budget <= np.finfo(float).eps):
            raise TopologyError("budget must be positive and finite")
        if pilot.min() < 0:
            raise TopologyError("pilot index must be non-negative")
        pairs = set()
        for k in range(n):
            key = (int(cell[k]), int(pilot[k]))
            if key in pairs:
                raise TopologyError(
                    f"pilot {key[1]} used twice in cell {key[0]}"
                )
            pairs.add(key)
        names = tuple(self.names) if self.names else tuple(f"loc{k}" for k in range(n))
        if len(names) != n:
            raise TopologyError("names must have one entry per location")
        for arr in (cell, gain, pilot, budget):
            arr.setflags(write=False)
        object.__setattr__(self, "cell", cell)
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "pilot", pilot)
        object.__setattr__(self, "budget", budget)
        object.__setattr__(self, "names", names)

    @property
    def n_locations(self):
        return self.gain.shape[0]

    @property
    def n_cells(self):
        return self.gain.shape[1]

    @property
    def serving_gain(self):
        """Gain of each location toward its own base station."""
        return self.gain[np.arange(self.n_locations), self.cell]

    def copilots(self, k):
        """Locations sharing the pilot of ``k``, ``k`` included."""
        return np.flatnonzero(self.pilot == self.pilot[k])

    def locations_in(self, l):
        return np.flatnonzero(self.cell == l)

    def check_pilots(self, phy):
        if self.pilot.max() >= phy.tau:
            raise TopologyError(
                f"pilot index {int(self.pilot.max())} needs tau > {phy.tau}"
            )


@dataclass(frozen=True, eq=False)
class EffectiveGains:
    """Closed-form effective gains derived from a topology.

    ``G[k]`` is the desired-signal gain of location ``k``; ``q[k]`` is the
    estimation denominator sum of ``k``'s serving base station;
    ``cross[k, i]`` is the effective gain of location ``k`` seen through
    co-pilot ``i``'s base station (zero unless ``i`` is a co-pilot of
    ``k`` other than ``k`` itself); ``coupling`` is the full interference
    matrix ``A`` of the module docstring. ``cell`` and ``budget`` are
    carried along so solvers need a single object.
    """

    G: np.ndarray
    q: np.ndarray
    cross: np.ndarray
    coupling: np.ndarray
    cell: np.ndarray
    budget: np.ndarray

    @property
    def n_locations(self):
        return self.G.shape[0]

    @property
    def n_cells(self):
        return self.budget.shape[0]


def effective_gains(topology, phy):
    """Compute ``G``, ``q``, the co-pilot cross gains and the coupling matrix."""
    topology.check_pilots(phy)
    g = topology.gain
    cell = topology.cell
    n = topology.n_locations
    tr = phy.tau * phy.rho
    same_pilot = topology.pilot[:, None] == topology.pilot[None, :]
    # q[i] sums the gains from BS(i) to every co-pilot of i, i included
    q = np.array([g[same_pilot[i], cell[i]].sum() for i in range(n)])
    denom = 1.0 + tr * q
    g_serv = topology.serving_gain
    G = phy.nu * tr * g_serv**2 / denom
    # gain of k toward BS(i), normalised by BS(i)'s estimation denominator
    g_to_bs = g[:, cell]
    cross = phy.nu * tr * g_to_bs**2 / denom[None, :]
    cross = np.where(same_pilot, cross, 0.0)
    np.fill_diagonal(cross, 0.0)
    coupling = g_to_bs + cross
    for arr in (G, q, cross, coupling):
        arr.setflags(write=False)
    return EffectiveGains(
        G=G, q=q, cross=cross, coupling=coupling,
        cell=topology.cell, budget=topology.budget,
    )


def path_gain(distance, exponent=2.5, reference=1.0):
    """Path-loss gain ``(distance / reference) ** -exponent``."""
    d = np.asarray(distance, dtype=float) / reference
    if np.any(d <= 0):
        raise TopologyError("distances must be positive")
    return d ** (-exponent)


def topology_from_positions(bs_xy, loc_xy, cell, pilot, budget,
                            exponent=2.5, reference=1.0, names=()):
    """Build a topology from base-station and location coordinates."""
    bs_xy = np.asarray(bs_xy, dtype=float).reshape(-1, 2)
    loc_xy = np.asarray(loc_xy, dtype=float).reshape(-1, 2)
    dist = np.linalg.norm(loc_xy[:, None, :] - bs_xy[None, :, :], axis=-1)
    return NetworkTopology(
        cell=cell, gain=path_gain(dist, exponent, reference), pilot=pilot,
        budget=budget, names=names,
    )


def _check_power(p, n):
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise ValueError(f"power vector must have shape ({n},)")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("power vector must be finite and non-negative")
    return p


def interference_denominator(p, gains):
    """Noise-plus-interference term ``1 + A @ p`` of every location."""
    p = _check_power(p, gains.n_locations)
    return 1.0 + gains.coupling @ p


def sinr(p, gains, k=None):
    """Effective SINR of every location, or of location ``k`` only."""
    p = _check_power(p, gains.n_locations)
    gamma = p * gains.G / (1.0 + gains.coupling @ p)
    return gamma if k is None else float(gamma[k])


def rate(p, gains, k=None):
    """Achievable rate ``ln(1 + sinr)`` in nats per unit time."""
    r = np.log1p(sinr(p, gains))
    return r if k is None else float(r[k])


def nats_to_bits(r_nats, bandwidth=1.0):
    """Convert a rate in nats per channel use to bits per second."""
    return np.asarray(r_nats) * bandwidth / np.log(2.0)
