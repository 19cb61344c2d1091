"""
Centralized power control.

Maximises ``sum_k X_k ln sinr_k(p)`` subject to per-cell power budgets.
In log-power coordinates the problem is convex, and its stationarity
condition gives the fixed-point form ``p_k = X_k / (beta_cell(k) + h_k(p))``
with::

    h_k(p) = sum_j X_j A[j, k] / D_j(p),    D_j(p) = 1 + sum_i A[j, i] p_i

i.e. ``h`` is the gradient of ``sum_j X_j ln D_j`` with respect to ``p``.
For fixed duals the inner loop iterates that map (a standard interference
function) to its unique fixed point; the outer loop moves the duals along
the projected subgradient ``sum_k p_k - P_l``.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import EmptyQueue, NonConvergence
from .netmodel import sinr

__all__ = [
    "SolverConfig",
    "KKTResiduals",
    "SolverReport",
    "as_queue",
    "objective",
    "h_function",
    "fixed_point_map",
    "inner_fixed_point",
    "solve",
    "kkt_residuals",
    "cell_sums",
]

_DIVERGENCE_FACTOR = 1e12
# inside solve a zero dual is abandoned once a location alone exceeds this
# multiple of its cell budget: such a dual cannot be optimal anyway
_ZERO_DUAL_BLOWUP = 2.0


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances, iteration caps and the dual step rule.

    ``step_schedule`` is ``"fixed"`` (``delta_i = step0``) or
    ``"diminishing"`` (``delta_i = step0 / sqrt(i)``). ``step_scaling``
    selects the subgradient direction: ``"newton"`` rescales the raw
    budget violation by the inverse sensitivity of the cell powers to the
    duals, ``"none"`` uses the raw violation.
    """

    inner_tol: float = 1e-10
    outer_tol: float = 1e-6
    stationarity_tol: float = 1e-6
    step0: float = 1.0
    step_schedule: str = "fixed"
    step_scaling: str = "newton"
    max_inner: int = 100_000
    max_outer: int = 500

    def __post_init__(self):
        for name in ("inner_tol", "outer_tol", "stationarity_tol", "step0"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.step_schedule not in ("fixed", "diminishing"):
            raise ValueError(f"unknown step_schedule {self.step_schedule!r}")
        if self.step_scaling not in ("newton", "none"):
            raise ValueError(f"unknown step_scaling {self.step_scaling!r}")

    def step(self, i):
        if self.step_schedule == "fixed":
            return self.step0
        return self.step0 / math.sqrt(i)


@dataclass(frozen=True)
class KKTResiduals:
    """Max-norm KKT residuals; all entries are non-negative.

    ``stationarity`` is relative to the queue weights.
    """

    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementary_slackness: float

    def max(self):
        return max(self.stationarity, self.primal_feasibility,
                   self.dual_feasibility, self.complementary_slackness)

    def as_dict(self):
        return {
            "stationarity": self.stationarity,
            "primal_feasibility": self.primal_feasibility,
            "dual_feasibility": self.dual_feasibility,
            "complementary_slackness": self.complementary_slackness,
        }


@dataclass
class SolverReport:
    p: np.ndarray
    beta: np.ndarray
    objective: float
    inner_iterations: int
    outer_iterations: int
    kkt: KKTResiduals
    empty: bool = False
    history: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {
            "p": [float(v) for v in self.p],
            "beta": [float(v) for v in self.beta],
            "objective": float(self.objective),
            "inner_iterations": int(self.inner_iterations),
            "outer_iterations": int(self.outer_iterations),
            "kkt": self.kkt.as_dict(),
            "empty": bool(self.empty),
        }


def as_queue(X, n=None):
    """Validate a queue-weight vector (flow counts or quantized counts)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 1 or (n is not None and X.shape[0] != n):
        raise ValueError(f"queue state must be a vector of length {n}")
    if np.any(X < 0) or not np.all(np.isfinite(X)):
        raise ValueError("queue entries must be finite and non-negative")
    return X


def cell_sums(p, cell, n_cells):
    return np.bincount(cell, weights=p, minlength=n_cells)


def objective(p, X, gains):
    """``sum_k X_k ln sinr_k(p)`` over the active locations."""
    X = as_queue(X, gains.n_locations)
    act = X > 0
    if not act.any():
        return 0.0
    p = np.asarray(p, dtype=float)
    if np.any(p[act] <= 0):
        raise ValueError("active locations need strictly positive power")
    gamma = sinr(np.where(act, p, 0.0), gains)
    return float(X[act] @ np.log(gamma[act]))


def _h(p, X, A):
    return (X / (1.0 + A @ p)) @ A


def h_function(p, X, gains):
    """Gradient of ``sum_j X_j ln D_j(p)`` with respect to every ``p_k``."""
    X = as_queue(X, gains.n_locations)
    p = np.where(X > 0, np.asarray(p, dtype=float), 0.0)
    return _h(p, X, gains.coupling)


def fixed_point_map(p, beta, X, gains):
    """One application of ``T(p) = X / (beta_cell + h(p))``."""
    X = as_queue(X, gains.n_locations)
    beta_loc = np.asarray(beta, dtype=float)[gains.cell]
    p = np.where(X > 0, np.asarray(p, dtype=float), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = X / (beta_loc + _h(p, X, gains.coupling))
    return np.where(X > 0, out, 0.0)


class _Problem:
    """The active sub-problem: inactive locations removed."""

    def __init__(self, X, gains):
        self.active = np.flatnonzero(X > 0)
        self.X = X[self.active]
        self.A = np.ascontiguousarray(gains.coupling[np.ix_(self.active, self.active)])
        self.G = gains.G[self.active]
        self.n_cells = gains.n_cells
        self.cell = gains.cell[self.active]
        self.budget = gains.budget
        self.has_users = np.bincount(self.cell, minlength=self.n_cells) > 0
        self.weight = np.bincount(self.cell, weights=self.X, minlength=self.n_cells)
        self.n_active = np.bincount(self.cell, minlength=self.n_cells)

    def uniform_split(self):
        return self.budget[self.cell] / self.n_active[self.cell]

    def sums(self, p):
        return np.bincount(self.cell, weights=p, minlength=self.n_cells)

    def expand(self, p_act, n):
        p = np.zeros(n)
        p[self.active] = p_act
        return p


@njit(cache=True)
def _fixed_point_kernel(X, A, beta_loc, p0, tol, max_iter, limit):
    # status: 0 converged, 1 diverged, 2 iteration cap
    n = X.size
    p = p0.copy()
    p_new = np.empty(n)
    w = np.empty(n)
    change = np.inf
    for it in range(1, max_iter + 1):
        for j in range(n):
            d = 1.0
            for i in range(n):
                d += A[j, i] * p[i]
            w[j] = X[j] / d
        change = 0.0
        bad = False
        for k in range(n):
            h = 0.0
            for j in range(n):
                h += w[j] * A[j, k]
            v = X[k] / (beta_loc[k] + h)
            c = abs(v - p[k]) / v
            if c > change:
                change = c
            if not v <= limit[k]:
                bad = True
            p_new[k] = v
        p, p_new = p_new, p
        if change <= tol:
            return p, it, change, 0
        if bad:
            return p, it, change, 1
    return p, max_iter, change, 2


def _iterate(prob, beta, p0, tol, max_iter, blowup=_DIVERGENCE_FACTOR):
    beta_loc = beta[prob.cell]
    # only a zero dual can let the iterates run away
    limit = np.where(beta_loc > 0, np.inf, blowup * prob.budget[prob.cell])
    p, n, change, status = _fixed_point_kernel(
        prob.X, prob.A, beta_loc, np.asarray(p0, dtype=float), tol, max_iter, limit,
    )
    if status == 1:
        raise NonConvergence("fixed-point iteration diverged", last=p,
                             residual=change, divergent=True, iterations=n)
    if status == 2:
        raise NonConvergence(f"fixed point not reached in {max_iter} iterations",
                             last=p, residual=change, iterations=n)
    return p, n


def inner_fixed_point(beta, X, gains, config=SolverConfig(), p0=None,
                      return_iterations=False):
    """Iterate ``p <- X / (beta + h(p))`` until the relative change is below tolerance.

    ``p0`` defaults to the uniform split of each budget over the active
    locations of the cell. Raises :class:`NonConvergence` when the cap is
    hit or the iterates blow up (no fixed point exists for some zero dual).
    """
    X = as_queue(X, gains.n_locations)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (gains.n_cells,) or np.any(beta < 0):
        raise ValueError("beta must be a non-negative vector with one entry per cell")
    prob = _Problem(X, gains)
    if prob.active.size == 0:
        raise EmptyQueue("no active location")
    start = prob.uniform_split() if p0 is None else np.asarray(p0, float)[prob.active]
    p, n = _iterate(prob, beta, start, config.inner_tol, config.max_inner)
    p = prob.expand(p, gains.n_locations)
    return (p, n) if return_iterations else p


def _dual_jacobian(prob, beta, p):
    """Sensitivity of the cell power sums to the duals at the fixed point."""
    X, A = prob.X, prob.A
    D = 1.0 + A @ p
    h = (X / D) @ A
    dh = -(A * (X / D**2)[:, None]).T @ A
    E = np.zeros((p.size, prob.n_cells))
    E[np.arange(p.size), prob.cell] = 1.0
    M = np.diag(beta[prob.cell] + h) + p[:, None] * dh
    dp = -np.linalg.solve(M, p[:, None] * E)
    return E.T @ dp


def _dual_value(prob, beta, p):
    """Lagrangian at the inner minimiser ``p(beta)``, i.e. the dual function."""
    D = 1.0 + prob.A @ p
    util = prob.X @ (np.log(p) + np.log(prob.G) - np.log(D))
    return -util + beta @ (prob.sums(p) - prob.budget)


def _newton_direction(prob, beta, p, r):
    # cells held at zero with the gradient pushing them further down stay put
    free = prob.has_users & ~((beta <= 0) & (r < 0))
    d = np.zeros_like(r)
    if free.any():
        J = _dual_jacobian(prob, beta, p)[np.ix_(free, free)]
        diag = np.maximum(-np.diag(J), 1e-300)
        try:
            d[free] = -np.linalg.solve(J, r[free])
        except np.linalg.LinAlgError:
            d[free] = r[free] / diag
        if d @ r <= 0:
            d[free] = r[free] / diag
    return d


def _converged(prob, beta, r, tol):
    on = prob.has_users
    if np.any(r[on] > tol):
        return False
    pos = on & (beta > 0)
    return bool(np.all(np.abs(r[pos]) <= tol)
                and np.all(beta[pos] * np.abs(r[pos]) <= tol))


def _subgradient_step(prob, beta, p, r, step, config, inner):
    trial = np.where(prob.has_users, np.maximum(beta + step * r, 0.0), 0.0)
    try:
        return (trial,) + inner(prob, trial, p, config.inner_tol,
                                config.max_inner, blowup=_ZERO_DUAL_BLOWUP)
    except NonConvergence as exc:
        zeroed = (trial == 0) & prob.has_users
        if not (exc.divergent and zeroed.any()):
            raise
        wasted = exc.iterations
    # back off from zero: a tenth of the previous dual, or a small fraction
    # of the starting dual if the cell was already at zero
    fallback = np.where(beta > 0, beta / 10.0, 1e-3 * prob.weight / prob.budget)
    trial = np.where(zeroed, fallback, trial)
    p_new, n_in = inner(prob, trial, p, config.inner_tol, config.max_inner)
    return trial, p_new, n_in + wasted


def _newton_step(prob, beta, p, r, step, config, inner):
    d = _newton_direction(prob, beta, p, r)
    q0 = _dual_value(prob, beta, p)
    # the dual is only known to inner-loop accuracy
    slack = 1e-11 * (abs(q0) + 1.0)
    alpha = step
    total = 0
    for _ in range(60):
        trial = np.where(prob.has_users, np.maximum(beta + alpha * d, 0.0), 0.0)
        try:
            p_new, n_in = inner(prob, trial, p, config.inner_tol,
                                config.max_inner, blowup=_ZERO_DUAL_BLOWUP)
        except NonConvergence as exc:
            if not exc.divergent:
                raise
            total += exc.iterations
            alpha *= 0.5
            continue
        total += n_in
        # Armijo ascent along the projection arc
        if _dual_value(prob, trial, p_new) >= q0 + 1e-4 * (r @ (trial - beta)) - slack:
            return trial, p_new, total
        alpha *= 0.5
    raise NonConvergence("dual line search failed", last=p,
                         residual=float(np.max(np.abs(r))))


def solve(X, gains, config=SolverConfig(), beta0=None, p0=None,
          keep_history=False, inner=None, on_dual_update=None):
    """Optimal powers and duals for queue state ``X``.

    The default starting duals are ``beta_l = W_l / P_l`` with ``W_l`` the
    total queue weight of cell ``l``; at those duals the fixed-point map is
    bounded, so the first inner loop always converges. A projected dual
    step that lands on zero and makes the inner loop diverge is retried at
    a tenth of the previous dual.

    ``inner`` replaces the compiled fixed-point loop (same signature as
    the internal ``_iterate``) and ``on_dual_update`` is called with the
    new duals after every outer update; both exist for the distributed
    emulation.
    """
    inner = _iterate if inner is None else inner
    X = as_queue(X, gains.n_locations)
    n = gains.n_locations
    prob = _Problem(X, gains)
    if prob.active.size == 0:
        zero = KKTResiduals(0.0, 0.0, 0.0, 0.0)
        return SolverReport(
            p=np.zeros(n), beta=np.zeros(gains.n_cells), objective=0.0,
            inner_iterations=0, outer_iterations=0, kkt=zero, empty=True,
        )

    if beta0 is None:
        beta = np.where(prob.has_users, prob.weight / prob.budget, 0.0)
    else:
        beta = np.where(prob.has_users, np.asarray(beta0, dtype=float), 0.0)
    p = prob.uniform_split() if p0 is None else np.asarray(p0, float)[prob.active]
    p = np.where(p > 0, p, prob.uniform_split())

    total_inner = 0
    history = []
    p, n_in = inner(prob, beta, p, config.inner_tol, config.max_inner)
    total_inner += n_in
    r = prob.sums(p) - prob.budget
    i = 0
    while not _converged(prob, beta, r, config.outer_tol):
        i += 1
        if i > config.max_outer:
            raise NonConvergence(
                f"duals did not converge in {config.max_outer} iterations",
                last=prob.expand(p, n), residual=float(np.max(np.abs(r))),
            )
        if config.step_scaling == "newton":
            trial, p_new, n_in = _newton_step(prob, beta, p, r, config.step(i),
                                              config, inner)
        else:
            trial, p_new, n_in = _subgradient_step(prob, beta, p, r, config.step(i),
                                                   config, inner)
        total_inner += n_in
        beta, p = trial, p_new
        r = prob.sums(p) - prob.budget
        if on_dual_update is not None:
            on_dual_update(beta)
        if keep_history:
            history.append((beta.copy(), float(np.max(np.abs(r)))))

    p_full = prob.expand(p, n)
    return SolverReport(
        p=p_full,
        beta=beta,
        objective=objective(p_full, X, gains),
        inner_iterations=total_inner,
        outer_iterations=i,
        kkt=kkt_residuals(p_full, beta, X, gains),
        history=history,
    )


def kkt_residuals(p, beta, X, gains):
    """Stationarity, primal/dual feasibility and complementary slackness.

    Stationarity is ``max |p_k (beta + h_k) - X_k| / X_k`` over active
    locations; the others are absolute per-cell values.
    """
    X = as_queue(X, gains.n_locations)
    p = np.asarray(p, dtype=float)
    beta = np.asarray(beta, dtype=float)
    act = X > 0
    p_act = np.where(act, p, 0.0)
    if act.any():
        h = _h(p_act, X, gains.coupling)
        stat = np.abs(p[act] * (beta[gains.cell[act]] + h[act]) - X[act]) / X[act]
        stationarity = float(stat.max())
    else:
        stationarity = 0.0
    gap = cell_sums(p_act, gains.cell, gains.n_cells) - gains.budget
    return KKTResiduals(
        stationarity=stationarity,
        primal_feasibility=float(max(gap.max(), 0.0)),
        dual_feasibility=float(max((-beta).max(), 0.0)),
        complementary_slackness=float(np.max(np.abs(beta * gap))),
    )


def with_overrides(config, **kw):
    return replace(config, **kw)
