import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import direct_gains, two_by_two
from mimoflow import oracle
from mimoflow.errors import EmptyQueue, NonConvergence
from mimoflow.netmodel import NetworkTopology, PhyParams, effective_gains
from mimoflow.solver import (
    SolverConfig,
    fixed_point_map,
    h_function,
    inner_fixed_point,
    kkt_residuals,
    objective,
    solve,
)


def single(G=88.0, theta=1.0, budget=100.0):
    return direct_gains([G], [[theta]], [0], [budget])


def test_objective_single_user():
    # gamma = 10 * 88 / (1 + 10) = 80
    assert objective(np.array([10.0]), np.array([1.0]), single()) == pytest.approx(
        math.log(80))


def test_objective_empty_and_zero_power(twocell):
    _, _, g = twocell
    assert objective(np.ones(4), np.zeros(4), g) == 0.0
    with pytest.raises(ValueError):
        objective(np.array([0.0, 1, 1, 1]), np.ones(4), g)


def test_h_single_user():
    h = h_function(np.array([10.0]), np.array([1.0]), single())
    assert h[0] == pytest.approx(1 / 11)


def test_h_zero_queue(twocell):
    _, _, g = twocell
    assert np.all(h_function(np.ones(4), np.zeros(4), g) == 0)


def test_h_is_gradient_of_log_denominators(rng):
    for _ in range(20):
        _, g = two_by_two(rng)
        X = rng.integers(1, 6, 4).astype(float)
        p = rng.uniform(0.1, 5, 4)
        f = lambda v: X @ np.log(1 + g.coupling @ v)
        fd = np.array([(f(p + e) - f(p - e)) / 2e-6 for e in np.eye(4) * 1e-6])
        h = h_function(p, X, g)
        assert np.max(np.abs(fd - h)) / np.max(np.abs(h)) < 1e-5


def test_inner_fixed_point_closed_form():
    # p = 1 / (1 + 1/(1+p))  <=>  p^2 + p - 1 = 0
    p = inner_fixed_point(np.array([1.0]), np.array([1.0]), single())
    assert p[0] == pytest.approx((math.sqrt(5) - 1) / 2, rel=1e-9)
    # scalar iteration of the same recursion as an independent check
    q = 1.0
    for _ in range(200):
        q = 1 / (1 + 1 / (1 + q))
    assert p[0] == pytest.approx(q, rel=1e-9)


def test_inner_fixed_point_symmetric(symmetric):
    _, g = symmetric
    p = inner_fixed_point(np.array([0.3, 0.3]), np.array([2.0, 2.0]), g)
    assert p[0] == pytest.approx(p[1], rel=1e-12)


def test_inner_follows_recursion_and_increases_from_zero(rng):
    cfg = SolverConfig()
    for _ in range(100):
        _, g = two_by_two(rng)
        X = rng.integers(1, 6, 4).astype(float)
        beta = rng.uniform(0.05, 2, 2)
        p = np.zeros(4)
        for _ in range(5000):
            nxt = fixed_point_map(p, beta, X, g)
            assert np.all(nxt >= p - 1e-12 * nxt)
            done = np.max(np.abs(nxt - p) / nxt) <= cfg.inner_tol
            p = nxt
            if done:
                break
        ref = inner_fixed_point(beta, X, g, cfg, p0=np.zeros(4))
        assert np.allclose(p, ref, rtol=1e-12)


def test_inner_fixed_point_unique(rng):
    for _ in range(50):
        _, g = two_by_two(rng)
        X = rng.integers(1, 6, 4).astype(float)
        beta = rng.uniform(0.05, 2, 2)
        a = inner_fixed_point(beta, X, g, p0=rng.uniform(0.01, 1, 4))
        b = inner_fixed_point(beta, X, g, p0=rng.uniform(10, 100, 4))
        assert np.max(np.abs(a - b) / a) <= 10 * SolverConfig().inner_tol


def test_dual_monotonicity(rng):
    for _ in range(50):
        _, g = two_by_two(rng)
        X = rng.integers(1, 6, 4).astype(float)
        beta = rng.uniform(0.05, 2, 2)
        up = beta.copy()
        up[0] *= 1.5
        a = inner_fixed_point(beta, X, g)
        b = inner_fixed_point(up, X, g)
        assert np.all(b[g.cell == 0] < a[g.cell == 0])


def test_inner_cap_raises_with_last_iterate(rng):
    _, g = two_by_two(rng)
    with pytest.raises(NonConvergence) as info:
        inner_fixed_point(np.array([0.1, 0.1]), np.ones(4), g,
                          SolverConfig(max_inner=2))
    assert info.value.last is not None and info.value.residual > 0


def test_inner_empty_queue(twocell):
    _, _, g = twocell
    with pytest.raises(EmptyQueue):
        inner_fixed_point(np.ones(2), np.zeros(4), g)


def test_solve_single_user_saturates_budget():
    topo = NetworkTopology(cell=[0], gain=[[0.3]], pilot=[0], budget=[7.0])
    g = effective_gains(topo, PhyParams())
    for X in (1.0, 4.0):
        r = solve(np.array([X]), g)
        assert r.p[0] == pytest.approx(7.0, abs=1e-6)
        assert r.beta[0] > 0


def test_solve_symmetric(symmetric):
    _, g = symmetric
    r = solve(np.array([3.0, 3.0]), g)
    assert r.p[0] == pytest.approx(r.p[1], rel=1e-9)


def test_solve_meets_kkt(rng):
    for _ in range(50):
        _, g = two_by_two(rng)
        X = rng.integers(0, 6, 4).astype(float)
        if not X.any():
            continue
        r = solve(X, g)
        assert r.kkt.max() <= 1e-6
        assert np.all(r.p[X == 0] == 0)
        sums = np.bincount(g.cell, weights=r.p, minlength=2)
        assert np.all(sums <= g.budget + 1e-6)
        busy = r.beta > 0
        assert np.all(np.abs(sums - g.budget)[busy] <= 1e-6)


def test_solve_matches_grid_oracle():
    rng = np.random.default_rng(99)
    _, g = two_by_two(rng)
    X = np.array([2.0, 1.0, 3.0, 1.0])
    grid = oracle.GridSpec.largest_within([2, 2])
    p_grid, f_grid = oracle.grid_search(X, g, grid)
    r = solve(X, g)
    assert r.objective >= f_grid - 1e-4
    assert r.objective == pytest.approx(f_grid, abs=1e-4)
    # the polished oracle point is itself nearly stationary
    res = kkt_residuals(p_grid, r.beta, X, g)
    assert res.max() <= 1e-4


def test_empty_queue_flag(twocell):
    _, _, g = twocell
    r = solve(np.zeros(4), g)
    assert r.empty and np.all(r.p == 0) and r.objective == 0


def test_weight_scaling_invariance(rng):
    for _ in range(20):
        _, g = two_by_two(rng)
        X = rng.integers(1, 6, 4).astype(float)
        a = solve(X, g).p
        b = solve(3 * X, g).p
        assert np.max(np.abs(a - b)) <= 10 * SolverConfig().outer_tol * max(1, a.max())


def test_kkt_residual_examples(rng):
    _, g = two_by_two(rng)
    X = np.ones(4)
    r = solve(X, g)
    p = r.p.copy()
    p[g.cell == 0] *= (g.budget[0] + 1) / p[g.cell == 0].sum()
    assert kkt_residuals(p, r.beta, X, g).primal_feasibility == pytest.approx(1.0)
    interior = np.full(4, 1.0)
    assert kkt_residuals(interior, np.zeros(2), X, g).complementary_slackness == 0.0


def test_outer_cap_raises(twocell):
    _, _, g = twocell
    with pytest.raises(NonConvergence):
        solve(np.array([5.0, 1.0, 1.0, 5.0]), g, SolverConfig(max_outer=1, outer_tol=1e-12))


def test_plain_subgradient_mode_converges(symmetric):
    _, g = symmetric
    cfg = SolverConfig(step_scaling="none", step_schedule="diminishing", step0=0.05,
                       max_outer=20000)
    r = solve(np.array([2.0, 1.0]), g, cfg)
    ref = solve(np.array([2.0, 1.0]), g)
    assert r.objective == pytest.approx(ref.objective, abs=1e-5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_solver_beats_random_feasible_points(seed):
    rng = np.random.default_rng(seed)
    _, g = two_by_two(rng)
    X = rng.integers(1, 6, 4).astype(float)
    best = solve(X, g).objective
    for _ in range(20):
        p = np.empty(4)
        for l in range(2):
            p[g.cell == l] = rng.dirichlet(np.ones(2)) * rng.uniform(0.01, 1) * g.budget[l]
        assert objective(p, X, g) <= best + 1e-9
