import math

import numpy as np
import pytest

from conftest import two_by_two
from mimoflow.distributed import (
    DistributedConfig,
    SignalingLedger,
    assemble,
    distributed_solve_periteration,
    distributed_solve_stale,
    quantize,
    staleness_bound_check,
)
from mimoflow.flowsim import ArrivalConfig, PolicySpec, simulate
from mimoflow.solver import solve


def test_quantize_rounds_half_up():
    v = quantize([0, 0.9, 1, 3, 4.99], 2.0)
    assert v.Xhat.tolist() == [0, 0, 2, 4, 4]
    X = np.arange(50) * 0.37
    assert np.max(np.abs(quantize(X, 0.8).Xhat - X)) <= 0.4 + 1e-12


def test_config_validation():
    assert DistributedConfig(quant_step=3.0).max_quant_error == 1.5
    with pytest.raises(ValueError):
        DistributedConfig(exchange_period=0)
    with pytest.raises(ValueError):
        DistributedConfig(quant_step=0)
    with pytest.raises(ValueError):
        DistributedConfig(mode="gossip")


def test_stale_solve_matches_centralized_on_view(rng):
    _, g = two_by_two(rng)
    view = quantize([3, 1, 4, 2], 2.0)
    per_bs = distributed_solve_stale(view, g)
    assert len(per_bs) == 2
    assert np.array_equal(assemble(per_bs, g), solve(view.Xhat, g).p)


def test_per_iteration_matches_and_counts(rng):
    for _ in range(20):
        _, g = two_by_two(rng)
        X = rng.integers(0, 5, 4).astype(float)
        if not X.any():
            continue
        ledger = SignalingLedger()
        r = distributed_solve_periteration(X, g, ledger=ledger)
        ref = solve(X, g)
        act = X > 0
        assert np.max(np.abs(r.p - ref.p)[act] / ref.p[act]) <= 1e-10
        expected = act.sum() * r.inner_iterations + g.n_cells * r.outer_iterations
        assert ledger.scalars_exchanged == expected
        assert ledger.exchange_events == r.outer_iterations


def test_ledger_never_decreases():
    ledger = SignalingLedger()
    ledger.record(4)
    with pytest.raises(ValueError):
        ledger.record(-1)
    assert ledger.scalars_exchanged == 4


def stale_trace(twocell, D=10, step=2.0, horizon=300.0, seed=3, lam=0.3):
    _, _, g = twocell
    cfg = DistributedConfig(D, step)
    spec = PolicySpec("distributed", distributed=cfg)
    return simulate(g, ArrivalConfig([lam] * 4), spec, horizon, seed), cfg


def test_exchange_schedule_and_ledger(twocell):
    trace, cfg = stale_trace(twocell, horizon=295.0)
    ex = trace.times[trace.kinds == "exchange"]
    assert np.allclose(ex, np.arange(0, 295.0, 10))
    assert trace.signaling.exchange_events == math.ceil(295.0 / 10)
    assert trace.signaling.scalars_exchanged == 4 * math.ceil(295.0 / 10)


def test_bound_holds_on_real_trace(twocell):
    trace, cfg = stale_trace(twocell)
    check = staleness_bound_check(trace, cfg, lambda_max=100, R_max=100)
    assert check.held and check.violations == 0 and check.margin >= 0
    assert check.windows == 30
    assert check.fixed_bound_held


def test_bound_detects_tampered_view(twocell):
    trace, cfg = stale_trace(twocell)
    trace.view = trace.view.copy()
    trace.view[5] += 10
    assert not staleness_bound_check(trace, cfg).held


def test_bound_needs_view(twocell):
    _, _, g = twocell
    trace = simulate(g, ArrivalConfig([0.1] * 4), PolicySpec(), 10.0, 1)
    with pytest.raises(ValueError):
        staleness_bound_check(trace, DistributedConfig())
