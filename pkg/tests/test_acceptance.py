"""Acceptance criteria, each run at its stated size and tolerance.

Every test prints one PASS/FAIL line, repeated in the terminal summary.
"""

import time

import pytest

import conftest
from mimoflow import cli, verify


@pytest.fixture
def report(capsys):
    def emit(number, ok, text):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
        conftest.ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_c1_solver_matches_grid_oracle(report):
    r = verify.solver_vs_oracle(trials=20, tol=1e-4, kkt_tol=1e-6)
    ok = r.passed and r.seconds <= 120
    report(1, ok, f"{r.trials} instances, {r.violations} failures, "
                  f"max oracle excess {r.worst:.2e}, {r.seconds:.1f}s (limit 120s)")


def test_c2_standard_function_axioms(report):
    r = verify.standard_function_axioms(trials=1000)
    report(2, r.passed, f"{r.trials} trials, {r.violations} violations")


def test_c3_hessian_psd(report):
    r = verify.hessian_battery(trials=100, rel_tol=1e-6)
    report(3, r.passed, f"{r.trials} points, {r.violations} violations, "
                        f"min eig/norm {r.worst:.3e}")


def test_c4_gradient(report):
    r = verify.gradient_battery(trials=100, tol=1e-5)
    report(4, r.passed, f"{r.trials} instances, max relative error {r.worst:.2e} "
                        f"(limit 1e-5)")


def test_c5_drift_nonpositive(report):
    r = verify.drift_battery(trials=100, tol=1e-9)
    report(5, r.passed, f"{r.trials} trials, max probe {r.worst:.3e} (limit 1e-9)")


def test_c6_mm1(report):
    r = verify.mm1_check(min_events=200_000, tol=0.10)
    ok = r.passed and r.seconds <= 60
    report(6, ok, f"relative error {r.worst:.3%} (limit 10%), {r.detail}, "
                  f"{r.seconds:.1f}s (limit 60s)")


def test_c7_stale_scheme_keeps_verdicts(report):
    r, result = verify.agreement_sweep(seeds=(1, 2, 3), workers=1)
    bounds = all(row.bound_held for row in result.rows if row.bound_held is not None)
    ok = r.passed and bounds and r.seconds <= 900
    report(7, ok, f"6 scales x 3 seeds, {r.detail}, staleness bound "
                  f"{'held' if bounds else 'violated'}, {r.seconds:.0f}s (limit 900s)")


def test_c8_degenerate_equivalence(report):
    r = verify.degenerate_equivalence(rel_tol=1e-8)
    report(8, r.passed, f"{r.trials} comparisons, max relative gap {r.worst:.2e}, "
                        f"{r.detail}")


def test_c9_determinism(tmp_path, report):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("""{
      "arrivals": {"lambda": [0.3, 0.2, 0.3, 0.2]},
      "policy": {"kind": "distributed", "exchange_period": 10, "quant_step": 2.0},
      "simulation": {"horizon": 300.0},
      "sweep": {"scale_grid": [0.2, 1.5], "policies": ["centralized", "distributed"]},
      "seeds": [1, 2]
    }""")
    mismatched = []
    compared = 0
    t0 = time.perf_counter()
    for command in ("solve", "simulate", "sweep"):
        outs = [tmp_path / f"{command}-{i}" for i in range(2)]
        for out in outs:
            code = cli.main(["--config", str(cfg), "--command", command, "--seed", "21",
                             "--out", str(out)])
            assert code == 0
        for path in sorted(outs[0].iterdir()):
            a = [l for l in path.read_text().splitlines()
                 if not l.startswith(cli.GENERATED_PREFIX)]
            b = [l for l in (outs[1] / path.name).read_text().splitlines()
                 if not l.startswith(cli.GENERATED_PREFIX)]
            compared += 1
            if a != b:
                mismatched.append(f"{command}/{path.name}")
    report(9, not mismatched, f"{compared} artifacts compared, "
                              f"mismatches: {mismatched or 'none'}, "
                              f"{time.perf_counter() - t0:.1f}s")
