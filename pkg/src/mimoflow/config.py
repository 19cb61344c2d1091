"""
Experiment configuration: a single JSON document.

Units: gains are linear power ratios, powers and budgets are in units of
the receiver noise power, rates are in nats per unit time (``bandwidth``
in Hz, if given, adds bit-per-second columns), arrival rates are flows
per unit time and flow sizes are in nats. Distances are in metres.

Example::

    {
      "scenario": {"builtin": "two-cell", "budget": 100.0},
      "phy": {"M": 100, "tau": 2, "rho": 100.0},
      "arrivals": {"lambda": [0.2, 0.2, 0.2, 0.2]},
      "policy": {"kind": "distributed", "exchange_period": 10, "quant_step": 2.0},
      "simulation": {"horizon": 2000.0},
      "sweep": {"base_lambda": [1, 1, 1, 1], "scale_grid": [0.1, 0.5, 2.0]},
      "seeds": [1, 2, 3]
    }
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .distributed import PER_ITERATION, STALE_QUANTIZED, DistributedConfig
from .errors import ConfigError, TopologyError
from .flowsim import ArrivalConfig, PolicySpec, StabilityThresholds
from .netmodel import (
    NetworkTopology,
    PhyParams,
    effective_gains,
    topology_from_positions,
)
from .scenarios import (
    PATH_LOSS_EXPONENT,
    REFERENCE_DISTANCE,
    two_cell_layout,
)
from .solver import SolverConfig

__all__ = [
    "ScenarioSpec",
    "PolicyConfig",
    "SimulationSpec",
    "SweepSpec",
    "ExperimentConfig",
    "load_config",
    "parse_config",
]

COMMANDS = ("solve", "simulate", "sweep", "verify")


def _tuple(v):
    if v is None:
        return None
    return tuple(_tuple(x) if isinstance(x, (list, tuple)) else x for x in v)


@dataclass(frozen=True)
class ScenarioSpec:
    """Either a built-in layout or explicit gains / positions.

    ``gain`` (locations x cells) takes precedence over ``bs_xy`` and
    ``loc_xy``; positions are converted with the path-loss law.
    """

    builtin: str = "two-cell"
    budget: float = 100.0
    budgets: tuple = None
    gain: tuple = None
    bs_xy: tuple = None
    loc_xy: tuple = None
    cell: tuple = None
    pilot: tuple = None
    names: tuple = None
    path_loss_exponent: float = PATH_LOSS_EXPONENT
    reference_distance: float = REFERENCE_DISTANCE


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "centralized"
    mode: str = STALE_QUANTIZED
    exchange_period: int = 10
    quant_step: float = 1.0


@dataclass(frozen=True)
class SimulationSpec:
    horizon: float = 2000.0
    warmup_fraction: float = 0.2
    stable_slope: float = 0.01
    unstable_slope: float = 0.1


@dataclass(frozen=True)
class SweepSpec:
    base_lambda: tuple = None
    scale_grid: tuple = (0.1, 0.2, 0.35, 1.5, 2.0, 3.0)
    policies: tuple = ("centralized",)
    workers: int = 1


@dataclass(frozen=True)
class VerifySpec:
    scale: float = 1.0
    include_sweep: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSpec = ScenarioSpec()
    phy: PhyParams = PhyParams(M=100, tau=2, rho=100.0)
    lam: tuple = None
    mean_flow_size: float = 1.0
    size_law: str = "exponential"
    queue: tuple = None
    policy: PolicyConfig = PolicyConfig()
    solver: SolverConfig = SolverConfig()
    simulation: SimulationSpec = SimulationSpec()
    sweep: SweepSpec = SweepSpec()
    verify: VerifySpec = VerifySpec()
    seeds: tuple = (1,)
    bandwidth: float = None
    command: str = None
    out: str = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    # --- derived objects -------------------------------------------------

    def topology(self):
        if "topology" not in self._cache:
            self._cache["topology"] = _build_topology(self.scenario)
        return self._cache["topology"]

    def gains(self):
        if "gains" not in self._cache:
            self._cache["gains"] = effective_gains(self.topology(), self.phy)
        return self._cache["gains"]

    def arrivals(self, lam=None):
        rates = self.lam if lam is None else lam
        if rates is None:
            rates = (0.0,) * self.topology().n_locations
        return ArrivalConfig(tuple(rates), self.mean_flow_size, self.size_law)

    def distributed(self):
        return DistributedConfig(self.policy.exchange_period, self.policy.quant_step,
                                 self.policy.mode)

    def policy_spec(self, kind=None):
        kind = self.policy.kind if kind is None else kind
        if kind == "centralized":
            return PolicySpec("centralized", self.solver)
        return PolicySpec("distributed", self.solver, self.distributed())

    def thresholds(self):
        s = self.simulation
        return StabilityThresholds(stable_slope=s.stable_slope,
                                   unstable_slope=s.unstable_slope,
                                   warmup_fraction=s.warmup_fraction)

    # --- serialisation ---------------------------------------------------

    def to_dict(self):
        sc = {k: _plain(v) for k, v in asdict(self.scenario).items() if v is not None}
        out = {
            "scenario": sc,
            "phy": {"M": self.phy.M, "tau": self.phy.tau, "rho": self.phy.rho},
            "arrivals": {"mean_flow_size": self.mean_flow_size,
                         "size_law": self.size_law},
            "policy": asdict(self.policy),
            "solver": asdict(self.solver),
            "simulation": asdict(self.simulation),
            "sweep": {k: _plain(v) for k, v in asdict(self.sweep).items()
                      if v is not None},
            "verify": asdict(self.verify),
            "seeds": list(self.seeds),
        }
        if self.lam is not None:
            out["arrivals"]["lambda"] = list(self.lam)
        if self.queue is not None:
            out["queue"] = list(self.queue)
        for key in ("bandwidth", "command", "out"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def sha256(self):
        """Hash of the canonical JSON form, independent of key order."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _build_topology(sc):
    n_budget = None
    if sc.gain is not None:
        gain = np.asarray(sc.gain, dtype=float)
        n_cells = gain.shape[1] if gain.ndim == 2 else 0
        cell, pilot = sc.cell, sc.pilot
        n_budget = n_cells
    elif sc.bs_xy is not None:
        lay = {"bs_xy": sc.bs_xy, "loc_xy": sc.loc_xy}
        cell, pilot = sc.cell, sc.pilot
        n_budget = len(sc.bs_xy)
    else:
        lay = two_cell_layout()
        cell = sc.cell if sc.cell is not None else lay["cell"]
        pilot = sc.pilot if sc.pilot is not None else lay["pilot"]
        n_budget = len(lay["bs_xy"])
    budget = sc.budgets if sc.budgets is not None else [sc.budget] * n_budget
    names = sc.names if sc.names is not None else (
        lay["names"] if sc.gain is None and sc.bs_xy is None else ())
    if sc.gain is not None:
        return NetworkTopology(cell=cell, gain=gain, pilot=pilot, budget=budget,
                               names=names or ())
    return topology_from_positions(
        lay["bs_xy"], lay["loc_xy"], cell=cell, pilot=pilot, budget=budget,
        exponent=sc.path_loss_exponent, reference=sc.reference_distance,
        names=names or (),
    )


def _section(raw, name, cls, defaults=None):
    path = name
    data = raw.get(name, {})
    if not isinstance(data, dict):
        raise ConfigError(path, "must be an object")
    allowed = {f.name for f in fields(cls) if not f.name.startswith("_")}
    kw = dict(defaults or {})
    for key, value in data.items():
        target = key
        if target not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown field")
        kw[target] = _tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _need(cond, field_name, message):
    if not cond:
        raise ConfigError(field_name, message)


def _finite_nonneg(values, field_name):
    try:
        arr = np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(field_name, "must be a list of numbers") from None
    _need(arr.ndim == 1, field_name, "must be a flat list")
    _need(np.all(np.isfinite(arr)) and np.all(arr >= 0), field_name,
          "entries must be finite and non-negative")
    return arr


def parse_config(raw):
    """Validate a decoded JSON document and build an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {"scenario", "phy", "arrivals", "policy", "solver", "simulation",
             "sweep", "verify", "seeds", "queue", "bandwidth", "command", "out"}
    for key in raw:
        _need(key in known, key, "unknown field")

    scenario = _section(raw, "scenario", ScenarioSpec)
    sc_budgets = scenario.budgets if scenario.budgets is not None else (scenario.budget,)
    for b in sc_budgets:
        _need(isinstance(b, (int, float)) and b > np.finfo(float).eps and np.isfinite(b),
              "scenario.budget", "budget must be positive and finite")
    _need(scenario.builtin in ("two-cell", None, ""), "scenario.builtin",
          f"unknown built-in scenario {scenario.builtin!r}")
    phy = _section(raw, "phy", PhyParams, {"M": 100, "tau": 2, "rho": 100.0})
    arr = raw.get("arrivals", {})
    _need(isinstance(arr, dict), "arrivals", "must be an object")
    for key in arr:
        _need(key in ("lambda", "mean_flow_size", "size_law"), f"arrivals.{key}",
              "unknown field")
    lam = arr.get("lambda")
    if lam is not None:
        lam = tuple(float(v) for v in _finite_nonneg(lam, "arrivals.lambda"))
    size = arr.get("mean_flow_size", 1.0)
    _need(isinstance(size, (int, float)) and size > 0, "arrivals.mean_flow_size",
          "must be positive")
    law = arr.get("size_law", "exponential")
    _need(law in ("exponential", "deterministic"), "arrivals.size_law",
          "must be exponential or deterministic")

    policy = _section(raw, "policy", PolicyConfig)
    _need(policy.kind in ("centralized", "distributed"), "policy.kind",
          "must be centralized or distributed")
    _need(policy.mode in (STALE_QUANTIZED, PER_ITERATION), "policy.mode",
          f"must be {STALE_QUANTIZED} or {PER_ITERATION}")
    try:
        DistributedConfig(policy.exchange_period, policy.quant_step, policy.mode)
    except (TypeError, ValueError) as exc:
        raise ConfigError("policy", str(exc)) from None
    solver = _section(raw, "solver", SolverConfig)
    simulation = _section(raw, "simulation", SimulationSpec)
    _need(isinstance(simulation.horizon, (int, float)) and simulation.horizon > 0,
          "simulation.horizon", "must be positive")
    _need(0 <= simulation.warmup_fraction < 1, "simulation.warmup_fraction",
          "must lie in [0, 1)")
    sweep = _section(raw, "sweep", SweepSpec)
    if sweep.base_lambda is not None:
        base = _finite_nonneg(sweep.base_lambda, "sweep.base_lambda")
        _need(np.any(base > 0), "sweep.base_lambda", "must not be all zero")
        sweep = SweepSpec(tuple(float(v) for v in base), sweep.scale_grid,
                          sweep.policies, sweep.workers)
    _finite_nonneg(sweep.scale_grid, "sweep.scale_grid")
    _need(len(sweep.scale_grid) > 0, "sweep.scale_grid", "must not be empty")
    for kind in sweep.policies:
        _need(kind in ("centralized", "distributed"), "sweep.policies",
              f"unknown policy {kind!r}")
    _need(isinstance(sweep.workers, int) and sweep.workers >= 1, "sweep.workers",
          "must be an integer >= 1")
    verify = _section(raw, "verify", VerifySpec)
    _need(verify.scale > 0, "verify.scale", "must be positive")

    seeds = raw.get("seeds", [1])
    _need(isinstance(seeds, list) and seeds and all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds),
        "seeds", "must be a non-empty list of non-negative integers")
    queue = raw.get("queue")
    if queue is not None:
        queue = tuple(float(v) for v in _finite_nonneg(queue, "queue"))
    bandwidth = raw.get("bandwidth")
    _need(bandwidth is None or (isinstance(bandwidth, (int, float)) and bandwidth > 0),
          "bandwidth", "must be positive")
    command = raw.get("command")
    _need(command is None or command in COMMANDS, "command",
          f"must be one of {', '.join(COMMANDS)}")
    out = raw.get("out")
    _need(out is None or isinstance(out, str), "out", "must be a path string")

    cfg = ExperimentConfig(
        scenario=scenario, phy=phy, lam=lam, mean_flow_size=float(size), size_law=law,
        queue=queue, policy=policy, solver=solver, simulation=simulation, sweep=sweep,
        verify=verify, seeds=tuple(seeds), bandwidth=bandwidth, command=command, out=out,
    )
    _cross_check(cfg)
    return cfg


def _cross_check(cfg):
    try:
        topo = cfg.topology()
    except TopologyError as exc:
        msg = str(exc)
        field_name = "scenario.budget" if "budget" in msg else "scenario"
        raise ConfigError(field_name, msg) from None
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError("scenario", str(exc)) from None
    n = topo.n_locations
    if topo.pilot.max() >= cfg.phy.tau:
        raise ConfigError("scenario.pilot",
                          f"pilot index {int(topo.pilot.max())} needs phy.tau above it")
    if cfg.lam is not None:
        _need(len(cfg.lam) == n, "arrivals.lambda", f"needs {n} entries")
    if cfg.queue is not None:
        _need(len(cfg.queue) == n, "queue", f"needs {n} entries")
    if cfg.sweep.base_lambda is not None:
        _need(len(cfg.sweep.base_lambda) == n, "sweep.base_lambda", f"needs {n} entries")


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from None
    return parse_config(raw)
