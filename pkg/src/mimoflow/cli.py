"""
Command-line entry point.

``mimoflow --config exp.json --command sweep --seed 3 --out results/``

Every CSV artifact starts with two comment lines, ``# seed=... config_sha256=...``
and ``# generated=<UTC timestamp>``, followed by a header row. Only the
timestamp line varies between reruns with the same seed and config.

Exit codes: 0 success, 1 other package error, 2 configuration error,
3 solver non-convergence, 4 verification failure.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import verify as batteries
from .config import COMMANDS, load_config, parse_config
from .distributed import staleness_bound_check
from .errors import ConfigError, EmptyTable, MimoflowError, NonConvergence
from .flowsim import simulate, stability_sweep, stability_verdict
from .netmodel import nats_to_bits, rate, sinr
from .solver import solve

__all__ = ["main", "run", "emit_plot_data", "write_csv"]

log = logging.getLogger("mimoflow")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_VERIFY = 4

GENERATED_PREFIX = "# generated="


def _table(header, rows, seed, digest, footer=()):
    buf = io.StringIO()
    buf.write(f"# seed={seed} config_sha256={digest}\n")
    buf.write(f"{GENERATED_PREFIX}{datetime.now(timezone.utc).isoformat()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    for line in footer:
        buf.write(line + "\n")
    return buf.getvalue()


def write_csv(path, header, rows, seed, digest, footer=()):
    with open(path, "w", newline="") as fh:
        fh.write(_table(header, rows, seed, digest, footer))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_plot_data(result):
    """Scale/verdict rows per policy, each block closed by a bracket footer.

    Returns ``(header, rows, footer)``; verdicts are coded 1 for stable
    evidence, -1 for unstable evidence and 0 for inconclusive.
    """
    rows = getattr(result, "rows", result)
    if not rows:
        raise EmptyTable("sweep table has no rows")
    code = {"stable-evidence": 1, "unstable-evidence": -1, "inconclusive": 0}
    out, footer = [], []
    policies = list(dict.fromkeys(r.policy for r in rows))
    for pol in policies:
        mine = [r for r in rows if r.policy == pol]
        out.extend([r.scale, code[r.verdict]] for r in mine)
        stable = [r.scale for r in mine if r.verdict == "stable-evidence"]
        unstable = [r.scale for r in mine if r.verdict == "unstable-evidence"]
        lo = max(stable) if stable else ""
        hi = min(unstable) if unstable else ""
        footer.append(f"# bracket policy={pol} largest_stable={lo} smallest_unstable={hi}")
    return ["scale", "verdict"], out, footer


def _cmd_solve(cfg, seed, out):
    g = cfg.gains()
    topo = cfg.topology()
    X = np.asarray(cfg.queue if cfg.queue is not None else np.ones(topo.n_locations))
    report = solve(X, g, cfg.solver)
    gamma = sinr(report.p, g)
    r = rate(report.p, g)
    header = ["location", "name", "cell", "queue", "power", "sinr", "rate_nats"]
    if cfg.bandwidth:
        header.append("rate_bps")
    rows = []
    for k in range(topo.n_locations):
        row = [k, topo.names[k], int(topo.cell[k]), float(X[k]), float(report.p[k]),
               float(gamma[k]), float(r[k])]
        if cfg.bandwidth:
            row.append(float(nats_to_bits(r[k], cfg.bandwidth)))
        rows.append(row)
    digest = cfg.sha256()
    write_csv(os.path.join(out, "solve.csv"), header, rows, seed, digest)
    doc = report.as_dict()
    doc.update(queue=[float(v) for v in X], config_sha256=digest,
               rates_nats=[float(v) for v in r])
    _write_json(os.path.join(out, "solve.json"), doc)
    log.info("objective %.10g, max KKT residual %.3g", report.objective, report.kkt.max())
    return EXIT_OK


def _cmd_simulate(cfg, seed, out):
    g = cfg.gains()
    topo = cfg.topology()
    spec = cfg.policy_spec()
    trace = simulate(g, cfg.arrivals(), spec, cfg.simulation.horizon, seed)
    verdict = stability_verdict(trace, cfg.thresholds())
    names = topo.names
    header = (["time", "kind", "location"] + [f"X_{n}" for n in names]
              + [f"p_{n}" for n in names])
    rows = []
    for e in range(trace.n_events):
        rows.append([float(trace.times[e]), trace.kinds[e], int(trace.locations[e])]
                    + [int(v) for v in trace.queue[e]]
                    + [float(v) for v in trace.power[e]])
    digest = cfg.sha256()
    write_csv(os.path.join(out, "trace.csv"), header, rows, seed, digest)
    doc = {
        "seed": seed,
        "config_sha256": digest,
        "policy": spec.label,
        "horizon": trace.horizon,
        "events": trace.n_events,
        "mean_total_queue": verdict.mean_total_queue,
        "growth_slope": verdict.growth_slope,
        "verdict": verdict.verdict,
        "queue_time_average": [float(v) for v in trace.queue_integral / trace.horizon],
        "signaling_scalars": trace.signaling.scalars_exchanged,
        "signaling_events": trace.signaling.exchange_events,
        "solver_incidents": trace.incidents,
    }
    if trace.view is not None:
        check = staleness_bound_check(trace, spec.distributed)
        doc["staleness_bound"] = {"held": check.held, "windows": check.windows,
                                  "violations": check.violations,
                                  "margin": check.margin}
    _write_json(os.path.join(out, "verdict.json"), doc)
    log.info("%s: %s (mean queue %.4g)", spec.label, verdict.verdict,
             verdict.mean_total_queue)
    return EXIT_OK


def _cmd_sweep(cfg, seed, out):
    g = cfg.gains()
    n = g.n_locations
    base = cfg.sweep.base_lambda or cfg.lam or (1.0,) * n
    seeds = list(cfg.seeds) if seed is None else [seed + i for i in range(len(cfg.seeds))]
    policies = [cfg.policy_spec(kind) for kind in cfg.sweep.policies]
    result = stability_sweep(g, base, cfg.sweep.scale_grid, policies,
                             cfg.simulation.horizon, seeds, cfg.thresholds(),
                             cfg.mean_flow_size, cfg.size_law, cfg.sweep.workers)
    header = ["policy", "scale", "verdict", "seed_verdicts", "mean_queue",
              "growth_slope", "events", "bound_held"]
    rows = [[r.policy, r.scale, r.verdict, ";".join(r.seed_verdicts), r.mean_queue,
             r.growth_slope, r.events, "" if r.bound_held is None else r.bound_held]
            for r in result.rows]
    digest = cfg.sha256()
    seed_label = ",".join(str(s) for s in seeds)
    write_csv(os.path.join(out, "sweep.csv"), header, rows, seed_label, digest)
    ph, prow, pfoot = emit_plot_data(result)
    write_csv(os.path.join(out, "plot_data.csv"), ph, prow, seed_label, digest, pfoot)
    _write_json(os.path.join(out, "sweep.json"), {
        "seeds": seeds, "config_sha256": digest,
        "bracket": {k: list(v) for k, v in result.bracket.items()},
    })
    for pol, (lo, hi) in result.bracket.items():
        log.info("%s: largest stable %s, smallest unstable %s", pol, lo, hi)
    return EXIT_OK


def _cmd_verify(cfg, seed, out):
    results = batteries.run_all(include_sweep=cfg.verify.include_sweep,
                                scale=cfg.verify.scale)
    rows = [[r.name, r.trials, r.violations, r.worst, r.passed] for r in results]
    # timings vary between runs, so they go to the log only
    write_csv(os.path.join(out, "verify.csv"),
              ["check", "trials", "violations", "worst", "passed"], rows, seed,
              cfg.sha256())
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


HANDLERS = {
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
}


def run(cfg, command=None, seed=None, out=None):
    """Dispatch one command and return its exit status."""
    command = command or cfg.command
    if command not in HANDLERS:
        raise ConfigError("command", f"must be one of {', '.join(COMMANDS)}")
    out = out or cfg.out or "out"
    os.makedirs(out, exist_ok=True)
    if command != "sweep" and seed is None:
        seed = cfg.seeds[0]
    return HANDLERS[command](cfg, seed, out)


def _parser():
    p = argparse.ArgumentParser(
        prog="mimoflow",
        description="Power control and flow-level stability experiments.",
    )
    p.add_argument("--config", help="JSON experiment file (default: built-in scenario)")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--seed", type=int, help="override the configured seed(s)")
    p.add_argument("--out", help="output directory (default: ./out)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else parse_config({})
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        if not (args.command or cfg.command):
            raise ConfigError("command", "no command given")
        return run(cfg, args.command, args.seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except MimoflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
