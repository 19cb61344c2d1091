"""
Independent checks for the solver.

* an exhaustive grid maximiser over the per-cell power simplices, with a
  pattern-search polish around the best grid point;
* finite-difference Hessian and gradient of the negated objective in
  log-power coordinates;
* a loop-based SINR evaluated straight from the raw topology;
* rate-region and birth-death closed forms used by the simulation tests.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import EmptyQueue, GridTooLarge
from .solver import as_queue, cell_sums, h_function, objective

__all__ = [
    "GridSpec",
    "grid_size",
    "grid_search",
    "refine",
    "numerical_hessian",
    "hessian_psd_check",
    "gradient_check",
    "sinr_bruteforce",
    "rates_feasible",
    "max_feasible_scale",
    "mm1_mean_queue",
]

MAX_ACTIVE = 4


@dataclass(frozen=True)
class GridSpec:
    """Per-cell simplex grid: powers ``P_l * i / n`` with ``i >= 1``.

    Parameters
    ----------
    points_per_axis : int
        ``n``, the number of budget fractions per location.
    max_points : int
        Evaluation budget over the product of the cell grids.
    """

    points_per_axis: int = 200
    max_points: int = 10_000_000

    def __post_init__(self):
        if int(self.points_per_axis) != self.points_per_axis or self.points_per_axis < 2:
            raise ValueError("points_per_axis must be an integer >= 2")

    @classmethod
    def largest_within(cls, users_per_cell, max_points=10_000_000, max_axis=2000):
        """Finest grid, up to ``max_axis`` points, whose size fits ``max_points``."""
        lo, hi = 2, max_axis
        if grid_size(users_per_cell, hi) <= max_points:
            return cls(points_per_axis=hi, max_points=max_points)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if grid_size(users_per_cell, mid) <= max_points:
                lo = mid
            else:
                hi = mid
        return cls(points_per_axis=lo, max_points=max_points)


def grid_size(users_per_cell, n):
    """Number of grid points: a product of ``C(n, K_l)`` over cells."""
    return math.prod(math.comb(n, k) for k in users_per_cell if k > 0)


def _simplex(k, n):
    """All ``i in {1..n}^k`` with ``sum(i) <= n``, as fractions of ``n``."""
    # a composition with positive parts and a slack is a k-subset of 1..n
    pts = np.array(list(combinations(range(1, n + 1), k)), dtype=float)
    parts = np.diff(np.concatenate([np.zeros((len(pts), 1)), pts], axis=1), axis=1)
    return parts / n


def _active_cells(X, gains):
    act = np.flatnonzero(X > 0)
    if act.size == 0:
        raise EmptyQueue("no active location")
    if act.size > MAX_ACTIVE:
        raise ValueError(f"grid search supports at most {MAX_ACTIVE} active locations")
    cells = sorted(set(gains.cell[act].tolist()))
    return act, cells, [act[gains.cell[act] == l] for l in cells]


def grid_search(X, gains, grid=GridSpec(), polish=True):
    """Best objective over the grid, optionally polished by :func:`refine`.

    Returns ``(p, objective)``. The objective is separable into per-cell
    pieces inside every interference denominator, so it is evaluated on
    the product grid by broadcasting rather than point by point.
    """
    X = as_queue(X, gains.n_locations)
    act, cells, members = _active_cells(X, gains)
    sizes = [len(m) for m in members]
    total = grid_size(sizes, grid.points_per_axis)
    if total > grid.max_points:
        raise GridTooLarge(
            f"{total} grid points exceed the budget of {grid.max_points}"
        )
    cand = [_simplex(k, grid.points_per_axis) * gains.budget[l]
            for k, l in zip(sizes, cells)]
    A = gains.coupling
    # per-cell contributions to every active denominator and to sum X ln p
    contrib = [c @ A[np.ix_(act, m)].T for c, m in zip(cand, members)]
    logp = [np.log(c) @ X[m] for c, m in zip(cand, members)]
    const = float(X[act] @ np.log(gains.G[act]))

    def expand(arr, axis):
        shape = [1] * len(cand)
        shape[axis] = -1
        return arr.reshape(shape)

    best = (-np.inf, None)
    # chunk along the first cell's axis to bound memory
    chunk = max(1, int(2_000_000 // max(1, total // len(cand[0]))))
    for start in range(0, len(cand[0]), chunk):
        sl = slice(start, start + chunk)
        val = expand(logp[0][sl], 0)
        for i in range(1, len(cand)):
            val = val + expand(logp[i], i)
        for jj, j in enumerate(act):
            d = expand(contrib[0][sl, jj], 0)
            for i in range(1, len(cand)):
                d = d + expand(contrib[i][:, jj], i)
            val = val - X[j] * np.log1p(d)
        idx = int(np.argmax(val))
        if val.flat[idx] > best[0]:
            pos = np.unravel_index(idx, val.shape)
            best = (float(val.flat[idx]), (start + pos[0],) + tuple(pos[1:]))

    p = np.zeros(gains.n_locations)
    for i, (c, m) in enumerate(zip(cand, members)):
        p[m] = c[best[1][i]]
    f = objective(p, X, gains)
    if abs(f - (best[0] + const)) > 1e-8 * max(1.0, abs(f)):
        raise AssertionError("broadcast grid evaluation disagrees with objective")
    if polish:
        step = gains.budget[gains.cell] / grid.points_per_axis
        p, f = refine(X, gains, p, step)
    return p, f


def refine(X, gains, p, step, min_step=1e-10, max_sweeps=100_000):
    """Pattern search over the feasible set starting from ``p``.

    Moves are single-coordinate changes of ``+-step`` and transfers of
    ``step`` between two locations of the same cell; the step is halved
    whenever no move improves the objective.
    """
    X = as_queue(X, gains.n_locations)
    act = np.flatnonzero(X > 0)
    p = np.where(X > 0, np.asarray(p, dtype=float), 0.0)
    step = np.where(X > 0, np.broadcast_to(np.asarray(step, float), p.shape), 0.0).copy()
    budget = gains.budget
    f = objective(p, X, gains)
    pairs = [(a, b) for a in act for b in act if a != b and gains.cell[a] == gains.cell[b]]

    def feasible(q):
        return np.all(q[act] > 0) and np.all(
            cell_sums(q, gains.cell, gains.n_cells) <= budget * (1 + 1e-15))

    for _ in range(max_sweeps):
        if np.all(step[act] < min_step * budget[gains.cell[act]]):
            break
        improved = False
        moves = [(k, s) for k in act for s in (1.0, -1.0)]
        for k, s in moves:
            q = p.copy()
            q[k] += s * step[k]
            if not feasible(q):
                # clip a growing move to the remaining budget
                if s > 0:
                    room = budget[gains.cell[k]] - cell_sums(p, gains.cell,
                                                              gains.n_cells)[gains.cell[k]]
                    if room <= 0:
                        continue
                    q[k] = p[k] + room
                else:
                    continue
            fq = objective(q, X, gains)
            if fq > f:
                p, f, improved = q, fq, True
        for a, b in pairs:
            delta = min(step[a], step[b])
            q = p.copy()
            q[a] += delta
            q[b] -= delta
            if q[b] <= 0:
                continue
            fq = objective(q, X, gains)
            if fq > f:
                p, f, improved = q, fq, True
        if not improved:
            step = step / 2
    return p, f


def _log_denominator_sum(ptilde, X, gains, act):
    p = np.zeros(gains.n_locations)
    p[act] = np.exp(ptilde)
    return float(X[act] @ np.log1p(gains.coupling[act] @ p))


def numerical_hessian(X, gains, ptilde, rel_step=1e-4):
    """Central-difference Hessian of the negated objective in log powers.

    Only the ``sum_j X_j ln D_j`` part is differenced: the remaining terms
    of the negated objective are affine in log powers and contribute
    nothing, while dropping them keeps round-off small. ``ptilde`` holds
    log powers of the active locations, in location order.
    """
    X = as_queue(X, gains.n_locations)
    act = np.flatnonzero(X > 0)
    if act.size == 0:
        raise EmptyQueue("no active location")
    x = np.asarray(ptilde, dtype=float)
    if x.shape != act.shape or not np.all(np.isfinite(x)):
        raise ValueError("ptilde must be finite, one entry per active location")
    n = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    F = lambda v: _log_denominator_sum(v, X, gains, act)
    f0 = F(x)
    H = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (F(x + ei) - 2 * f0 + F(x - ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = (F(x + ei + ej) - F(x + ei - ej) - F(x - ei + ej)
                       + F(x - ei - ej)) / (4 * h[i] * h[j])
            H[j, i] = H[i, j]
    return H


def hessian_psd_check(X, gains, ptilde, rel_step=1e-4):
    """Smallest eigenvalue of the numerical Hessian and its spectral norm."""
    H = numerical_hessian(X, gains, ptilde, rel_step)
    eig = np.linalg.eigvalsh(H)
    return float(eig[0]), float(np.max(np.abs(eig)))


def gradient_check(X, gains, ptilde, step=1e-6):
    """Max error of the analytic log-power gradient against central differences.

    The analytic gradient of the negated objective at zero duals is
    ``-X_k + p_k h_k(p)``. The error is normalised by the largest
    gradient entry.
    """
    X = as_queue(X, gains.n_locations)
    act = np.flatnonzero(X > 0)
    if act.size == 0:
        raise EmptyQueue("no active location")
    x = np.asarray(ptilde, dtype=float)
    if x.shape != act.shape:
        raise ValueError("ptilde must have one entry per active location")

    def F(v):
        p = np.zeros(gains.n_locations)
        p[act] = np.exp(v)
        return -objective(p, X, gains)

    p = np.zeros(gains.n_locations)
    p[act] = np.exp(x)
    analytic = (-X + p * h_function(p, X, gains))[act]
    hs = step * np.maximum(1.0, np.abs(x))
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = hs[i]
        fd[i] = (F(x + e) - F(x - e)) / (2 * hs[i])
    scale = max(float(np.max(np.abs(analytic))), 1e-300)
    return float(np.max(np.abs(fd - analytic)) / scale)


def sinr_bruteforce(p, topology, phy):
    """Effective SINR evaluated term by term from raw gains and pilots."""
    g = topology.gain
    cell, pilot = topology.cell, topology.pilot
    n = topology.n_locations
    tr = phy.tau * phy.rho
    out = np.empty(n)
    for k in range(n):
        lk = cell[k]
        q = sum(g[m, lk] for m in range(n) if pilot[m] == pilot[k])
        signal = p[k] * phy.nu * tr * g[k, lk] ** 2 / (1 + tr * q)
        interference = 1.0
        for i in range(n):
            li = cell[i]
            interference += g[k, li] * p[i]
            if i != k and pilot[i] == pilot[k]:
                qi = sum(g[m, li] for m in range(n) if pilot[m] == pilot[i])
                interference += p[i] * phy.nu * tr * g[k, li] ** 2 / (1 + tr * qi)
        out[k] = signal / interference
    return out


def rates_feasible(target, gains):
    """Minimal powers achieving ``target`` rates, or ``None`` if none exist.

    Locations with a zero target get zero power. With
    ``Gamma = diag((e^t - 1) / G)`` the powers solve
    ``p = Gamma (1 + A p)``, which has a non-negative solution iff the
    spectral radius of ``Gamma A`` is below one; budgets are then checked.
    """
    t = np.asarray(target, dtype=float)
    need = t > 0
    p = np.zeros(gains.n_locations)
    if not need.any():
        return p
    idx = np.flatnonzero(need)
    gam = np.expm1(t[idx]) / gains.G[idx]
    M = gam[:, None] * gains.coupling[np.ix_(idx, idx)]
    if np.max(np.abs(np.linalg.eigvals(M))) >= 1.0:
        return None
    p[idx] = np.linalg.solve(np.eye(idx.size) - M, gam)
    if np.any(p < 0):
        return None
    if np.any(cell_sums(p, gains.cell, gains.n_cells) > gains.budget):
        return None
    return p


def max_feasible_scale(direction, gains, rel_tol=1e-10):
    """Largest ``c`` such that rates ``c * direction`` are achievable."""
    d = np.asarray(direction, dtype=float)
    if np.any(d < 0) or not np.any(d > 0):
        raise ValueError("direction must be non-negative and non-zero")
    lo, hi = 0.0, 1.0
    while rates_feasible(hi * d, gains) is not None:
        lo, hi = hi, 2 * hi
    while hi - lo > rel_tol * hi:
        mid = (lo + hi) / 2
        if rates_feasible(mid * d, gains) is None:
            hi = mid
        else:
            lo = mid
    return lo


def mm1_mean_queue(load):
    """Stationary mean number in an M/M/1 queue, ``load / (1 - load)``."""
    if not 0 <= load < 1:
        raise ValueError("load must lie in [0, 1)")
    return load / (1.0 - load)
