"""
Randomised verification batteries.

Each battery draws seeded random instances, runs one family of checks
and returns a :class:`CheckResult`. The ``verify`` command runs them and
the acceptance tests call them with their stated trial counts.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import oracle
from .distributed import (
    DistributedConfig,
    SignalingLedger,
    distributed_solve_periteration,
)
from .flowsim import (
    UNSTABLE,
    ArrivalConfig,
    PolicySpec,
    drift_probe,
    simulate,
    stability_sweep,
    stability_verdict,
)
from .netmodel import NetworkTopology, PhyParams, effective_gains, rate
from .scenarios import two_cell
from .solver import SolverConfig, fixed_point_map, solve

__all__ = [
    "CheckResult",
    "random_instance",
    "solver_vs_oracle",
    "standard_function_axioms",
    "hessian_battery",
    "gradient_battery",
    "drift_battery",
    "mm1_check",
    "agreement_sweep",
    "degenerate_equivalence",
    "run_all",
]


@dataclass
class CheckResult:
    name: str
    trials: int
    violations: int
    worst: float
    seconds: float
    detail: str = ""

    @property
    def passed(self):
        return self.violations == 0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.trials} trials, "
                f"{self.violations} violations, worst={self.worst:.3g}, "
                f"{self.seconds:.1f}s {self.detail}").rstrip()


def random_instance(rng, budget=10.0, low=1e-3, high=1.0, phy=None):
    """Two cells with two locations each; location ``i`` uses pilot ``i % 2``."""
    phy = PhyParams(M=100, tau=2, rho=1.0) if phy is None else phy
    topo = NetworkTopology(cell=[0, 0, 1, 1], gain=rng.uniform(low, high, (4, 2)),
                           pilot=[0, 1, 0, 1], budget=[budget, budget])
    return topo, effective_gains(topo, phy)


def _random_queue(rng, n=4, high=6):
    while True:
        X = rng.integers(0, high, n).astype(float)
        if X.sum() > 0:
            return X


def solver_vs_oracle(trials=20, seed=2024, tol=1e-4, kkt_tol=1e-6,
                     max_points=10_000_000):
    """Solver objective against the polished grid maximum."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    bad, worst = 0, -np.inf
    for _ in range(trials):
        _, g = random_instance(rng)
        X = _random_queue(rng)
        per_cell = np.bincount(g.cell[X > 0], minlength=g.n_cells)
        grid = oracle.GridSpec.largest_within(per_cell, max_points)
        _, f_grid = oracle.grid_search(X, g, grid)
        report = solve(X, g)
        shortfall = f_grid - report.objective
        worst = max(worst, shortfall)
        if shortfall > tol or report.kkt.max() > kkt_tol:
            bad += 1
    return CheckResult("solver-vs-oracle", trials, bad, worst,
                       time.perf_counter() - t0)


def standard_function_axioms(trials=1000, seed=2025):
    """Positivity, monotonicity and scalability of the fixed-point map."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    bad = 0
    worst = -np.inf
    for _ in range(trials):
        _, g = random_instance(rng)
        X = _random_queue(rng)
        act = X > 0
        beta = rng.uniform(0, 2, 2) * (rng.random(2) < 0.7)
        p2 = rng.uniform(0, 10, 4)
        p1 = p2 + rng.uniform(0, 10, 4) * (rng.random(4) < 0.8)
        c = rng.uniform(1.01, 10)
        T1 = fixed_point_map(p1, beta, X, g)
        T2 = fixed_point_map(p2, beta, X, g)
        Tc = fixed_point_map(c * p2, beta, X, g)
        gap = max(
            float(np.max(-T2[act])),
            float(np.max((T2 - T1)[act])),
            float(np.max((Tc - c * T2)[act] / (c * T2[act]))),
        )
        worst = max(worst, gap)
        ok = (np.all(T2[act] > 0) and np.all(T1[act] >= T2[act])
              and np.all(Tc[act] < c * T2[act]))
        bad += not ok
    return CheckResult("standard-function-axioms", trials, bad, worst,
                       time.perf_counter() - t0)


def _random_point(rng, X, g):
    act = np.flatnonzero(X > 0)
    return np.log(rng.uniform(0.01, 1.0, act.size) * g.budget[g.cell[act]])


def hessian_battery(trials=100, seed=2026, rel_tol=1e-6):
    """Minimum eigenvalue of the log-power Hessian, relative to its norm."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    bad, worst = 0, np.inf
    for _ in range(trials):
        _, g = random_instance(rng)
        X = _random_queue(rng)
        lo, norm = oracle.hessian_psd_check(X, g, _random_point(rng, X, g))
        ratio = lo / norm if norm > 0 else 0.0
        worst = min(worst, ratio)
        bad += ratio < -rel_tol
    return CheckResult("hessian-psd", trials, bad, worst, time.perf_counter() - t0)


def gradient_battery(trials=100, seed=2027, tol=1e-5):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    bad, worst = 0, 0.0
    for _ in range(trials):
        _, g = random_instance(rng)
        X = _random_queue(rng)
        err = oracle.gradient_check(X, g, _random_point(rng, X, g))
        worst = max(worst, err)
        bad += not err < tol
    return CheckResult("gradient", trials, bad, worst, time.perf_counter() - t0)


def drift_battery(trials=100, seed=2028, tol=1e-9):
    """Drift probe with ``mu + eps`` drawn below the rates of a feasible vector."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    bad, worst = 0, -np.inf
    for i in range(trials):
        _, g = random_instance(rng)
        X = _random_queue(rng)
        if i % 4 == 0:
            # near-tight case: certify with the optimum itself
            cert = solve(X, g).p
            target = rate(cert, g) * rng.uniform(0.99, 1.0, 4)
        else:
            cert = np.empty(4)
            for l in range(2):
                share = rng.dirichlet(np.ones(2)) * rng.uniform(0.2, 1.0)
                cert[g.cell == l] = share * g.budget[l]
            target = rate(cert, g) * rng.uniform(0.5, 1.0, 4)
        eps = rng.uniform(0.0, 0.5) * target[X > 0].min()
        value = drift_probe(X, target - eps, eps, g, cert)
        worst = max(worst, value)
        bad += value > tol
    return CheckResult("drift-nonpositive", trials, bad, worst,
                       time.perf_counter() - t0)


def single_location(budget=10.0):
    """One location alone in one cell: its rate is fixed at full power."""
    topo = NetworkTopology(cell=[0], gain=[[1.0]], pilot=[0], budget=[budget])
    g = effective_gains(topo, PhyParams(M=100, tau=1, rho=1.0))
    return g, float(rate(np.array([budget]), g)[0])


def mm1_check(min_events=200_000, seed=11, tol=0.10):
    """Birth-death oracle at load 0.5 and transience at load 1.5."""
    t0 = time.perf_counter()
    g, R = single_location()
    # each unit of R-time yields about R events at load 0.5
    horizon = 1.1 * min_events / R
    low = simulate(g, ArrivalConfig([0.5 * R]), PolicySpec(), horizon, seed)
    mean = stability_verdict(low).mean_total_queue
    expect = oracle.mm1_mean_queue(0.5)
    err = abs(mean - expect) / expect
    high = simulate(g, ArrivalConfig([1.5 * R]), PolicySpec(), 5e3 / R, seed)
    verdict = stability_verdict(high).verdict
    bad = int(err > tol) + int(verdict != UNSTABLE) + int(low.n_events < min_events)
    return CheckResult("mm1-oracle", 2, bad, err, time.perf_counter() - t0,
                       f"mean={mean:.4f} events={low.n_events} high={verdict}")


AGREEMENT_SCALES = (0.1, 0.2, 0.35, 1.5, 2.0, 3.0)


def agreement_sweep(scales=AGREEMENT_SCALES, seeds=(1, 2, 3), horizon=2000.0, workers=1):
    """Centralized and stale-quantized verdicts on the two-cell scenario."""
    t0 = time.perf_counter()
    _, _, g = two_cell()
    stale = PolicySpec("distributed", distributed=DistributedConfig(10, 2.0))
    result = stability_sweep(g, np.ones(4), scales, [PolicySpec(), stale], horizon,
                             seeds, workers=workers)
    central = result.verdicts("centralized")
    distributed = result.verdicts(stale.label)
    mismatch = sum(a != b for a, b in zip(central, distributed))
    bound_fail = sum(r.bound_held is False for r in result.rows)
    return CheckResult("stale-vs-centralized-sweep", len(scales), mismatch + bound_fail,
                       float(mismatch), time.perf_counter() - t0,
                       f"centralized={central} stale={distributed}"), result


def degenerate_equivalence(horizon=300.0, seed=5, rel_tol=1e-8):
    """Stale scheme with D=1 and a vanishing step, and the per-iteration scheme."""
    t0 = time.perf_counter()
    _, _, g = two_cell()
    lam = ArrivalConfig([0.3] * 4)
    cfg = DistributedConfig(exchange_period=1, quant_step=1e-9)
    trace = simulate(g, lam, PolicySpec("distributed", distributed=cfg), horizon, seed)
    worst, bad, slots = 0.0, 0, 0
    for e in np.flatnonzero(trace.kinds == "exchange"):
        X = trace.queue[e].astype(float)
        ref = solve(X, g).p
        act = X > 0
        if act.any():
            err = float(np.max(np.abs(trace.power[e] - ref)[act] / ref[act]))
            worst = max(worst, err)
            bad += err > rel_tol
        slots += 1

    # per-iteration scheme along a centralized trace of the same seed
    base = simulate(g, lam, PolicySpec(), horizon, seed)
    cfg_solver = SolverConfig()
    alg2 = SignalingLedger()
    predicted = 0
    for e in range(base.n_events):
        X = base.queue[e].astype(float)
        if not X.any():
            continue
        before = alg2.scalars_exchanged
        report = distributed_solve_periteration(X, g, cfg_solver, alg2)
        act = X > 0
        predicted += int(act.sum()) * report.inner_iterations \
            + g.n_cells * report.outer_iterations
        err = float(np.max(np.abs(report.p - base.power[e])[act] / base.power[e][act]))
        worst2 = err
        bad += err > cfg_solver.inner_tol
        worst = max(worst, worst2)
        assert alg2.scalars_exchanged > before
    alg3 = g.n_locations * math.ceil(horizon / cfg.period_time)
    ratio, predicted_ratio = alg2.scalars_exchanged / alg3, predicted / alg3
    bad += ratio != predicted_ratio or not ratio > 1
    return CheckResult("degenerate-equivalence", slots + base.n_events, bad, worst,
                       time.perf_counter() - t0,
                       f"ledger_ratio={ratio:.2f} predicted={predicted_ratio:.2f}")


def run_all(include_sweep=False, scale=1.0):
    """Run every battery; ``scale`` shrinks the trial counts for quick checks."""
    n = lambda k: max(1, int(round(k * scale)))
    results = [
        solver_vs_oracle(n(20)),
        standard_function_axioms(n(1000)),
        hessian_battery(n(100)),
        gradient_battery(n(100)),
        drift_battery(n(100)),
        mm1_check(n(200_000)),
        degenerate_equivalence(horizon=max(20.0, 300.0 * scale)),
    ]
    if include_sweep:
        results.append(agreement_sweep()[0])
    return results
