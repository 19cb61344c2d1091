"""
Flow-level simulation of the dynamic user population.

Flows arrive at each location as a Poisson process and leave once their
data has been delivered. With exponential flow sizes a non-empty location
empties at rate ``R_k / mean_size`` (one flow in service at a time), which
makes the queue vector a continuous-time Markov chain; with deterministic
sizes the remaining work of the head-of-line flow is tracked explicitly.
Powers are recomputed by the policy after every event, so they are
constant between events.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributed import (
    PER_ITERATION,
    DistributedConfig,
    SignalingLedger,
    distributed_solve_periteration,
    quantize,
)
from .errors import InfeasibleCertificate, NonConvergence
from .netmodel import rate
from .solver import SolverConfig, as_queue, cell_sums, solve

__all__ = [
    "ArrivalConfig",
    "PolicySpec",
    "CentralizedPolicy",
    "PerIterationPolicy",
    "StaleQuantizedPolicy",
    "SimTrace",
    "StabilityThresholds",
    "StabilityVerdict",
    "simulate",
    "stability_verdict",
    "drift_probe",
    "SweepRow",
    "SweepResult",
    "stability_sweep",
]

STABLE = "stable-evidence"
UNSTABLE = "unstable-evidence"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ArrivalConfig:
    rates: tuple
    mean_flow_size: float = 1.0
    size_law: str = "exponential"

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 1 or np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValueError("arrival rates must be finite and non-negative")
        if not (self.mean_flow_size > 0 and math.isfinite(self.mean_flow_size)):
            raise ValueError("mean_flow_size must be positive")
        if self.size_law not in ("exponential", "deterministic"):
            raise ValueError(f"unknown size_law {self.size_law!r}")
        object.__setattr__(self, "rates", tuple(float(r) for r in rates))

    @property
    def lam(self):
        return np.array(self.rates)


class CentralizedPolicy:
    """Solve the full problem on the true queue state after every event."""

    name = "centralized"
    uses_view = False

    def __init__(self, gains, solver_config=SolverConfig()):
        self.gains = gains
        self.solver_config = solver_config
        self.ledger = SignalingLedger()
        self._cache = {}

    def _solve(self, X):
        key = X.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            hit = solve(X, self.gains, self.solver_config).p
            self._cache[key] = hit
        return hit

    def powers(self, X):
        return self._solve(np.asarray(X, dtype=float))


class PerIterationPolicy(CentralizedPolicy):
    """Exchange-every-iteration scheme; identical powers, counted signaling."""

    name = "per-iteration"

    def _solve(self, X):
        key = X.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            local = SignalingLedger()
            report = distributed_solve_periteration(X, self.gains, self.solver_config,
                                                    local)
            hit = (report.p, local.scalars_exchanged, local.exchange_events)
            self._cache[key] = hit
        # a repeated state reruns the protocol: charge its exchanges again
        self.ledger.record(hit[1], hit[2])
        return hit[0]


class StaleQuantizedPolicy:
    """Every BS solves on the shared quantized view from the last exchange.

    Base stations transmit only to locations that actually hold flows, so
    the applied power of an empty location is zero even when the view
    says otherwise.
    """

    name = "stale-quantized"
    uses_view = True

    def __init__(self, gains, solver_config=SolverConfig(),
                 config=DistributedConfig()):
        self.gains = gains
        self.solver_config = solver_config
        self.config = config
        self.ledger = SignalingLedger()
        self.view = None
        self._planned = None
        self._cache = {}

    def exchange(self, X):
        self.view = quantize(X, self.config.quant_step)
        # every location's quantized count is shared, zeros included
        self.ledger.record(self.gains.n_locations, 1)
        key = self.view.Xhat.tobytes()
        planned = self._cache.get(key)
        if planned is None:
            planned = solve(self.view.Xhat, self.gains, self.solver_config).p
            self._cache[key] = planned
        self._planned = planned

    def powers(self, X):
        if self._planned is None:
            raise RuntimeError("no exchange has happened yet")
        return np.where(np.asarray(X) > 0, self._planned, 0.0)


@dataclass(frozen=True)
class PolicySpec:
    """Picklable description of a power-control policy."""

    kind: str = "centralized"
    solver_config: SolverConfig = SolverConfig()
    distributed: DistributedConfig = None

    def __post_init__(self):
        if self.kind not in ("centralized", "distributed"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "distributed" and self.distributed is None:
            raise ValueError("distributed policy needs a DistributedConfig")

    @property
    def label(self):
        if self.kind == "centralized":
            return "centralized"
        d = self.distributed
        if d.mode == PER_ITERATION:
            return "per-iteration"
        return f"stale-quantized(D={d.exchange_period},step={d.quant_step:g})"

    def build(self, gains):
        if self.kind == "centralized":
            return CentralizedPolicy(gains, self.solver_config)
        if self.distributed.mode == PER_ITERATION:
            return PerIterationPolicy(gains, self.solver_config)
        return StaleQuantizedPolicy(gains, self.solver_config, self.distributed)


@dataclass
class SimTrace:
    """Event log of one run.

    Row ``e`` of ``queue``, ``power`` and ``view`` is the state right
    after event ``e``. Exchange events carry location ``-1``.
    """

    times: np.ndarray
    locations: np.ndarray
    kinds: np.ndarray
    queue: np.ndarray
    power: np.ndarray
    view: np.ndarray
    initial_queue: np.ndarray
    initial_power: np.ndarray
    initial_view: np.ndarray
    queue_integral: np.ndarray
    horizon: float
    total_lambda: float
    seed: int = None
    policy: str = ""
    signaling: SignalingLedger = field(default_factory=SignalingLedger)
    incidents: int = 0

    @property
    def n_locations(self):
        return self.initial_queue.shape[0]

    @property
    def n_events(self):
        return self.times.shape[0]

    def total_queue(self):
        return self.queue.sum(axis=1)

    def counts(self, kind):
        mask = self.kinds == kind
        return np.bincount(self.locations[mask], minlength=self.n_locations)

    def queue_at(self, t):
        """Queue vector in force at time ``t``."""
        e = np.searchsorted(self.times, t, side="right") - 1
        return self.initial_queue if e < 0 else self.queue[e]


class _Stream:
    """Buffered standard-exponential draws from one substream."""

    def __init__(self, seed, key):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
        self._rng = np.random.default_rng(ss)
        self._buf = self._rng.standard_exponential(256)
        self._i = 0

    def draw(self):
        if self._i == self._buf.size:
            self._buf = self._rng.standard_exponential(256)
            self._i = 0
        v = self._buf[self._i]
        self._i += 1
        return v


def simulate(gains, arrivals, policy, horizon, seed, initial_queue=None,
             max_incident_fraction=0.01):
    """Run the flow-level chain up to ``horizon`` and return its trace.

    ``policy`` is a :class:`PolicySpec` or an already built policy. Each
    location draws arrivals and service from its own substream, keyed by
    the location index, so adding a location leaves the others' draws
    unchanged. If the policy fails to produce powers the previous powers
    are kept and the incident counted; the run aborts once incidents
    exceed ``max_incident_fraction`` of the events so far (after 100
    events).
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if isinstance(policy, PolicySpec):
        policy = policy.build(gains)
    n = gains.n_locations
    lam = arrivals.lam
    if lam.shape != (n,):
        raise ValueError("one arrival rate per location is required")
    size = arrivals.mean_flow_size
    deterministic = arrivals.size_law == "deterministic"
    X = np.zeros(n, dtype=np.int64) if initial_queue is None else \
        np.asarray(initial_queue, dtype=np.int64).copy()
    if X.shape != (n,) or np.any(X < 0):
        raise ValueError("initial queue must be a non-negative vector")

    arr_streams = [_Stream(seed, (k, 0)) for k in range(n)]
    dep_streams = [_Stream(seed, (k, 1)) for k in range(n)]
    t = 0.0
    next_arr = np.array([
        arr_streams[k].draw() / lam[k] if lam[k] > 0 else np.inf for k in range(n)
    ])
    remaining = np.where(X > 0, size, 0.0)

    times, locs, kinds, queues, powers, views = [], [], [], [], [], []
    incidents = 0
    initial_queue = X.copy()
    initial_view = None
    period = np.inf
    next_ex = np.inf
    if policy.uses_view:
        period = policy.config.period_time
        next_ex = 0.0

    def current_powers(previous):
        nonlocal incidents
        try:
            return policy.powers(X)
        except NonConvergence:
            incidents += 1
            if previous is None:
                raise
            n_ev = len(times)
            if n_ev >= 100 and incidents > max_incident_fraction * n_ev:
                raise
            return np.where(X > 0, previous, 0.0)

    if policy.uses_view:
        p = None
    else:
        p = current_powers(None)
    G, A = gains.G, gains.coupling

    def rates_of(p):
        # unchecked form of netmodel.rate for the hot loop
        return np.log1p(p * G / (1.0 + A @ p))

    R = np.zeros(n) if p is None else rates_of(p)
    initial_power = np.zeros(n) if p is None else p.copy()
    integral = np.zeros(n)

    while True:
        busy = (X > 0) & (R > 0)
        dep = np.full(n, np.inf)
        for k in np.flatnonzero(busy):
            if deterministic:
                dep[k] = t + remaining[k] / R[k]
            else:
                dep[k] = t + dep_streams[k].draw() * size / R[k]
        k_arr = int(np.argmin(next_arr))
        k_dep = int(np.argmin(dep))
        t_next = min(next_arr[k_arr], dep[k_dep], next_ex)
        if t_next >= horizon:
            integral += X * (horizon - t)
            break
        dt = t_next - t
        integral += X * dt
        if deterministic:
            remaining[busy] -= R[busy] * dt
        t = t_next
        if t == next_ex:
            policy.exchange(X)
            kind, loc = "exchange", -1
            next_ex = next_ex + period
        elif next_arr[k_arr] <= dep[k_dep]:
            kind, loc = "arrival", k_arr
            if X[k_arr] == 0:
                remaining[k_arr] = size
            X[k_arr] += 1
            next_arr[k_arr] = t + arr_streams[k_arr].draw() / lam[k_arr]
        else:
            kind, loc = "departure", k_dep
            X[k_dep] -= 1
            remaining[k_dep] = size if X[k_dep] > 0 else 0.0
        p = current_powers(p)
        R = rates_of(p)
        times.append(t)
        locs.append(loc)
        kinds.append(kind)
        queues.append(X.copy())
        powers.append(p)
        if policy.uses_view:
            views.append(policy.view.Xhat)

    return SimTrace(
        times=np.array(times, dtype=float),
        locations=np.array(locs, dtype=np.int64),
        kinds=np.array(kinds, dtype=object),
        queue=np.array(queues, dtype=np.int64).reshape(-1, n),
        power=np.array(powers, dtype=float).reshape(-1, n),
        view=np.array(views, dtype=float).reshape(-1, n) if policy.uses_view else None,
        initial_queue=initial_queue,
        initial_power=initial_power,
        initial_view=initial_view,
        queue_integral=integral,
        horizon=float(horizon),
        total_lambda=float(lam.sum()),
        seed=seed,
        policy=policy.name,
        signaling=policy.ledger,
        incidents=incidents,
    )


@dataclass(frozen=True)
class StabilityThresholds:
    """Slope thresholds are fractions of the total arrival rate."""

    stable_slope: float = 0.01
    unstable_slope: float = 0.1
    warmup_fraction: float = 0.2
    min_horizon: float = 0.0
    grid_points: int = 2001


@dataclass(frozen=True)
class StabilityVerdict:
    mean_total_queue: float
    growth_slope: float
    verdict: str


def _step_integral(times, values, v0, a, b):
    """Integral over [a, b] of the right-continuous step function."""
    edges = np.concatenate(([a], np.clip(times, a, b), [b]))
    vals = np.concatenate(([v0], values))
    return float(np.sum(vals * np.diff(edges)))


def stability_verdict(trace, thresholds=StabilityThresholds()):
    """Empirical stability evidence from one trace.

    The mean total queue is averaged over the post-warmup window; the
    growth slope is the least-squares slope of the total queue sampled on
    a uniform grid over the second half of the horizon.
    """
    T = trace.horizon
    if T < thresholds.min_horizon or T <= 0:
        return StabilityVerdict(float("nan"), float("nan"), INCONCLUSIVE)
    total = trace.total_queue().astype(float)
    v0 = float(trace.initial_queue.sum())
    warm = thresholds.warmup_fraction * T
    idx = np.searchsorted(trace.times, warm, side="right") - 1
    start_val = v0 if idx < 0 else total[idx]
    after = trace.times > warm
    mean = _step_integral(trace.times[after], total[after], start_val, warm, T) / (T - warm)

    grid = np.linspace(T / 2, T, thresholds.grid_points)
    pos = np.searchsorted(trace.times, grid, side="right") - 1
    sampled = np.where(pos < 0, v0, total[np.maximum(pos, 0)]) if total.size else \
        np.full(grid.size, v0)
    slope = float(np.polyfit(grid, sampled, 1)[0])

    scale = trace.total_lambda
    if not math.isfinite(mean):
        verdict = UNSTABLE
    elif slope > thresholds.unstable_slope * scale and slope > 0:
        verdict = UNSTABLE
    elif slope < thresholds.stable_slope * scale or (scale == 0 and slope <= 0):
        verdict = STABLE
    else:
        verdict = INCONCLUSIVE
    return StabilityVerdict(mean_total_queue=mean, growth_slope=slope, verdict=verdict)


def _weights(rates):
    # e^r / (e^r - 1), written to stay accurate for small r
    return -1.0 / np.expm1(-rates)


def drift_probe(X, mu, epsilon, gains, certificate, solver_config=SolverConfig(),
                weights_from=None, budget_tol=1e-6):
    """Fluid drift term ``sum_k X_k w_k ((mu_k + eps) - R*_k)``.

    ``w_k = e^(mu_k+eps) / (e^(mu_k+eps) - 1)`` and ``R*`` are the rates
    of the optimal powers for ``weights_from`` (default ``X``). The
    ``certificate`` power vector must respect every budget (up to the
    absolute ``budget_tol``, the solver's own feasibility tolerance) and
    give each active location a rate of at least ``mu_k + eps``.
    """
    X = as_queue(X, gains.n_locations)
    target = np.asarray(mu, dtype=float) + epsilon
    act = X > 0
    if not act.any():
        return 0.0
    cert = np.asarray(certificate, dtype=float)
    over = cell_sums(cert, gains.cell, gains.n_cells) - gains.budget
    if np.any(over > budget_tol):
        raise InfeasibleCertificate("certificate exceeds a power budget")
    achieved = rate(cert, gains)
    if np.any(achieved[act] < target[act] * (1 - 1e-12) - 1e-15):
        raise InfeasibleCertificate("certificate rates do not cover mu + epsilon")
    if np.any(target[act] <= 0):
        raise InfeasibleCertificate("mu + epsilon must be positive on active locations")
    basis = X if weights_from is None else as_queue(weights_from, gains.n_locations)
    R_star = rate(solve(basis, gains, solver_config).p, gains)
    w = _weights(target[act])
    return float(np.sum(X[act] * w * (target[act] - R_star[act])))


@dataclass
class SweepRow:
    policy: str
    scale: float
    verdict: str
    seed_verdicts: tuple
    mean_queue: float
    growth_slope: float
    events: int
    bound_held: bool = None


@dataclass
class SweepResult:
    rows: list
    bracket: dict

    def verdicts(self, policy):
        return [r.verdict for r in self.rows if r.policy == policy]


def _aggregate(verdicts):
    for v in (STABLE, UNSTABLE):
        if sum(x == v for x in verdicts) * 2 > len(verdicts):
            return v
    return INCONCLUSIVE


def _run_point(args):
    gains, lam, size, law, spec, horizon, seed, thresholds, check_bound = args
    trace = simulate(gains, ArrivalConfig(lam, size, law), spec, horizon, seed)
    verdict = stability_verdict(trace, thresholds)
    held = None
    if check_bound and spec.kind == "distributed" and trace.view is not None:
        from .distributed import staleness_bound_check
        held = bool(staleness_bound_check(trace, spec.distributed))
    return verdict, trace.n_events, held


def _bracket(rows):
    stable = [r.scale for r in rows if r.verdict == STABLE]
    unstable = [r.scale for r in rows if r.verdict == UNSTABLE]
    return (max(stable) if stable else None, min(unstable) if unstable else None)


def stability_sweep(gains, base_lambda, scale_grid, policies, horizon, seeds,
                    thresholds=StabilityThresholds(), mean_flow_size=1.0,
                    size_law="exponential", workers=1, check_bound=True):
    """Replicated runs at ``lambda = c * base_lambda`` for every ``c`` and policy.

    Each grid point's verdict is the majority of its seeds' verdicts.
    The bracket per policy is (largest stable scale, smallest unstable
    scale). Runs may execute in ``workers`` processes; results are
    collected in grid order, so the table does not depend on scheduling.
    """
    base = np.asarray(base_lambda, dtype=float)
    if base.shape != (gains.n_locations,) or np.any(base < 0):
        raise ValueError("base_lambda must be a non-negative vector per location")
    if not np.any(base > 0):
        raise ValueError("base_lambda must not be zero")
    if isinstance(policies, PolicySpec):
        policies = [policies]
    seeds = list(seeds)
    jobs = []
    for spec in policies:
        for c in scale_grid:
            for s in seeds:
                jobs.append((gains, tuple(c * base), mean_flow_size, size_law, spec,
                             horizon, s, thresholds, check_bound))
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]

    rows = []
    it = iter(results)
    for spec in policies:
        for c in scale_grid:
            out = [next(it) for _ in seeds]
            verdicts = tuple(v.verdict for v, _, _ in out)
            helds = [h for _, _, h in out if h is not None]
            rows.append(SweepRow(
                policy=spec.label,
                scale=float(c),
                verdict=_aggregate(verdicts),
                seed_verdicts=verdicts,
                mean_queue=float(np.mean([v.mean_total_queue for v, _, _ in out])),
                growth_slope=float(np.mean([v.growth_slope for v, _, _ in out])),
                events=int(sum(e for _, e, _ in out)),
                bound_held=all(helds) if helds else None,
            ))
    bracket = {spec.label: _bracket([r for r in rows if r.policy == spec.label])
               for spec in policies}
    return SweepResult(rows=rows, bracket=bracket)
