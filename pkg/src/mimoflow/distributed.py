"""
Distributed power control emulation.

Two schemes are provided:

* per-iteration exchange: every inner iteration each user reports its
  interference-plus-noise level, base stations share the resulting
  ``X_j / D_j`` ratios and each one updates only its own users' powers;
* stale, quantized exchange: base stations share quantized queue
  lengths once every ``D`` flow-slots and each solves the full problem
  locally on that shared view, keeping its own cell's powers.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergence
from .solver import SolverConfig, as_queue, solve

__all__ = [
    "DistributedConfig",
    "StaleView",
    "SignalingLedger",
    "BoundCheck",
    "quantize",
    "distributed_solve_stale",
    "assemble",
    "distributed_solve_periteration",
    "staleness_bound_check",
]

PER_ITERATION = "per-iteration"
STALE_QUANTIZED = "stale-quantized"


@dataclass(frozen=True)
class DistributedConfig:
    """Exchange period (in flow-slots), quantizer step and scheme."""

    exchange_period: int = 10
    quant_step: float = 1.0
    mode: str = STALE_QUANTIZED
    slot_length: float = 1.0

    def __post_init__(self):
        if int(self.exchange_period) != self.exchange_period or self.exchange_period < 1:
            raise ValueError("exchange_period must be an integer >= 1")
        if not (self.quant_step > 0 and math.isfinite(self.quant_step)):
            raise ValueError("quant_step must be positive")
        if self.mode not in (PER_ITERATION, STALE_QUANTIZED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.slot_length > 0:
            raise ValueError("slot_length must be positive")

    @property
    def max_quant_error(self):
        return self.quant_step / 2.0

    @property
    def period_time(self):
        return self.exchange_period * self.slot_length


@dataclass(frozen=True)
class StaleView:
    """Quantized queue lengths as last exchanged, shared by every BS."""

    Xhat: np.ndarray
    age: int = 0

    def aged(self, slots=1):
        return StaleView(self.Xhat, self.age + slots)


@dataclass
class SignalingLedger:
    scalars_exchanged: int = 0
    exchange_events: int = 0

    def record(self, scalars, events=1):
        if scalars < 0 or events < 0:
            raise ValueError("ledger counters never decrease")
        self.scalars_exchanged += int(scalars)
        self.exchange_events += int(events)


def quantize(X, quant_step):
    """Round every queue length to the nearest multiple of ``quant_step``.

    Ties go up, so the view never understates a queue by more than half a
    step.
    """
    if not quant_step > 0:
        raise ValueError("quant_step must be positive")
    X = as_queue(X)
    Xhat = np.floor(X / quant_step + 0.5) * quant_step
    Xhat.setflags(write=False)
    return StaleView(Xhat=Xhat, age=0)


def distributed_solve_stale(view, gains, solver_config=SolverConfig()):
    """Every BS solves the full problem on ``view`` and keeps its own powers.

    Returns one array per cell holding that cell's location powers, in
    location order.
    """
    per_bs = []
    for l in range(gains.n_cells):
        report = solve(view.Xhat, gains, solver_config)
        per_bs.append(report.p[gains.cell == l])
    return per_bs


def assemble(per_bs, gains):
    """Concatenate per-BS power lists back into a full power vector."""
    p = np.zeros(gains.n_locations)
    for l, own in enumerate(per_bs):
        p[gains.cell == l] = own
    return p


def _message_passing_inner(ledger):
    """Inner loop run as the exchange protocol, counting scalars.

    Each iteration every active user measures ``D_j``, its BS forwards
    ``X_j / D_j`` to all others (one scalar per active location), and
    each BS updates only its own users.
    """

    def inner(prob, beta, p0, tol, max_iter, blowup=1e12):
        X, A, cell = prob.X, prob.A, prob.cell
        users = [np.flatnonzero(cell == l) for l in range(prob.n_cells)]
        limit = np.where(beta[cell] > 0, np.inf, blowup * prob.budget[cell])
        p = np.array(p0, dtype=float)
        change = np.inf
        for n in range(1, max_iter + 1):
            measured = 1.0 + A @ p
            ratios = X / measured
            ledger.record(X.size, events=0)
            p_new = np.empty_like(p)
            for l, own in enumerate(users):
                if own.size:
                    h = ratios @ A[:, own]
                    p_new[own] = X[own] / (beta[l] + h)
            change = float(np.max(np.abs(p_new - p) / p_new))
            p = p_new
            if change <= tol:
                return p, n
            if not np.all(np.isfinite(p)) or np.any(p > limit):
                raise NonConvergence("fixed-point iteration diverged", last=p,
                                     residual=change, divergent=True, iterations=n)
        raise NonConvergence(f"fixed point not reached in {max_iter} iterations",
                             last=p, residual=change, iterations=max_iter)

    return inner


def distributed_solve_periteration(X, gains, solver_config=SolverConfig(),
                                   ledger=None):
    """Per-iteration exchange scheme; returns the solver report.

    The ledger gains one scalar per active location per inner iteration
    and one dual per cell per outer update.
    """
    ledger = SignalingLedger() if ledger is None else ledger
    X = as_queue(X, gains.n_locations)

    def broadcast(beta):
        ledger.record(gains.n_cells, events=1)

    return solve(X, gains, solver_config, inner=_message_passing_inner(ledger),
                 on_dual_update=broadcast)


@dataclass
class BoundCheck:
    """Outcome of the staleness bound check.

    ``margin`` is the smallest slack ``bound - |X - Xhat|`` seen over all
    event times; ``fixed_bound_held`` is ``None`` unless per-slot maxima
    were supplied.
    """

    held: bool
    windows: int
    violations: int
    margin: float
    fixed_bound_held: bool = None
    details: list = field(default_factory=list, repr=False)

    def __bool__(self):
        return self.held


def staleness_bound_check(trace, config, lambda_max=None, R_max=None):
    """Check ``|X - Xhat|`` against the realized window bound at every event.

    Within the exchange window that starts at the last exchange, the gap
    is bounded by ``max(arrivals, departures) + E_Q`` where arrivals and
    departures are the realized counts of that location inside the
    window. When ``lambda_max`` and ``R_max`` (per-slot maxima) are given,
    the fixed bound ``max(D lambda_max, D R_max) + E_Q`` is checked too.
    """
    if trace.view is None:
        raise ValueError("trace carries no stale view")
    eq = config.max_quant_error
    tol = 1e-9 * max(1.0, config.quant_step)
    times, kinds, locs = trace.times, trace.kinds, trace.locations
    queue, view = trace.queue, trace.view
    n = trace.n_locations

    arrivals = np.zeros(n)
    departures = np.zeros(n)
    windows = 0
    violations = 0
    margin = np.inf
    fixed_ok = None
    if lambda_max is not None and R_max is not None:
        fixed_bound = config.exchange_period * max(lambda_max, R_max) + eq
        fixed_ok = True
    details = []

    def check(x, xhat, t):
        nonlocal violations, margin, fixed_ok
        gap = np.abs(x - xhat)
        slack = np.maximum(arrivals, departures) + eq - gap
        margin = min(margin, float(slack.min()))
        if np.any(slack < -tol):
            violations += 1
            details.append((float(t), gap.tolist()))
        if fixed_ok is not None and np.any(gap > fixed_bound + tol):
            fixed_ok = False

    if trace.initial_view is not None:
        check(trace.initial_queue, trace.initial_view, 0.0)
    for e in range(times.size):
        kind = kinds[e]
        if kind == "exchange":
            windows += 1
            arrivals[:] = 0.0
            departures[:] = 0.0
        elif kind == "arrival":
            arrivals[locs[e]] += 1
        elif kind == "departure":
            departures[locs[e]] += 1
        check(queue[e], view[e], times[e])
    return BoundCheck(held=violations == 0, windows=windows,
                      violations=violations, margin=float(margin),
                      fixed_bound_held=fixed_ok, details=details)
