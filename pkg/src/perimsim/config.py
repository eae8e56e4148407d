"""Scenario configuration: JSON schema, validation and bundled scenarios.

A scenario file is a single JSON document whose top-level keys are
``reservoirs``, ``demand``, ``gates``, ``weights``, ``sim``, ``controller``
and ``mc``. Field names are documented in the README; every physical
invariant is checked at parse time and violations name the offending field
path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .bathtub import DemandModel, TripLengthDist
from .fundamentals import DomainError, FundamentalDiagram, ReservoirParams


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


@dataclass(frozen=True)
class CostWeights:
    """Objective weights; the safety weight is derived from the trade-off rate.

    ``lambda_tradeoff`` is the extra travel time (minutes per vehicle) the
    operator accepts to avoid one accident; the absolute safety weight is
    c_S = lambda_tradeoff * (total vehicles loaded), expressed in veh-hours
    per accident internally. ``theta`` shares the minute scale.
    """

    c_T: float = 1.0  # per vehicle-hour of time in system
    lambda_tradeoff: float = 0.0  # min per vehicle per accident avoided
    theta: float = 0.0
    c_S_override: float | None = None  # veh-hours per accident, overrides lambda

    def __post_init__(self) -> None:
        if min(self.c_T, self.lambda_tradeoff, self.theta) < 0.0:
            raise ConfigError("cost weights must be non-negative")

    def c_S(self, planned_vehicles: float) -> float:
        if self.c_S_override is not None:
            return self.c_S_override
        return self.lambda_tradeoff / 60.0 * planned_vehicles

    @property
    def theta_h(self) -> float:
        return self.theta / 60.0


@dataclass(frozen=True)
class GatesConfig:
    u_max_AB: float = 43000.0
    u_max_BA: float = 43000.0
    u_min_AB: float = 0.0
    u_min_BA: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.u_min_AB <= self.u_max_AB and 0.0 <= self.u_min_BA <= self.u_max_BA):
            raise ConfigError("gate levels must satisfy 0 <= u_min <= u_max")


@dataclass(frozen=True)
class SimConfig:
    dt_s: float = 1.0
    horizon_min: float = 75.0
    clearance_min: float = 15.0
    flow_bin_s: float = 60.0

    def __post_init__(self) -> None:
        if self.dt_s <= 0.0 or self.horizon_min <= 0.0 or self.flow_bin_s <= 0.0:
            raise ConfigError("sim.dt_s, sim.horizon_min and sim.flow_bin_s must be positive")

    @property
    def dt_h(self) -> float:
        return self.dt_s / 3600.0

    @property
    def horizon_h(self) -> float:
        return self.horizon_min / 60.0

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_h / self.dt_h))


@dataclass(frozen=True)
class ControllerConfig:
    policy: str = "threshold"  # threshold | steady_state | no_control
    threshold_mode: str = "closed_until"  # closed_until | open_until
    trigger: str = "event"  # event | periodic
    control_interval_s: float = 60.0
    prediction_horizon_min: float = 75.0
    rollout_dt_s: float = 30.0
    rollout_seed: int = 0

    def __post_init__(self) -> None:
        if self.policy not in ("threshold", "steady_state", "no_control"):
            raise ConfigError(f"controller.policy {self.policy!r} unknown")
        if self.threshold_mode not in ("closed_until", "open_until"):
            raise ConfigError(f"controller.threshold_mode {self.threshold_mode!r} unknown")
        if self.trigger not in ("event", "periodic"):
            raise ConfigError(f"controller.trigger {self.trigger!r} unknown")
        if self.control_interval_s <= 0.0 or self.rollout_dt_s <= 0.0:
            raise ConfigError("controller intervals must be positive")


@dataclass(frozen=True)
class MonteCarloConfig:
    n_runs: int = 300
    base_seed: int = 20240001
    n_workers: int = 0  # 0: use all available cores

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ConfigError("mc.n_runs must be at least 1")


@dataclass(frozen=True)
class Scenario:
    """Complete experiment configuration (the unit the CLI operates on)."""

    name: str
    reservoir_A: ReservoirParams
    reservoir_B: ReservoirParams
    demand: DemandModel
    gates: GatesConfig
    weights: CostWeights
    sim: SimConfig
    controller: ControllerConfig
    mc: MonteCarloConfig
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def u_bar(self) -> tuple[float, float]:
        return (self.gates.u_max_AB, self.gates.u_max_BA)

    def planned_vehicles(self) -> float:
        return self.demand.planned_total(self.sim.horizon_h)

    def replace(self, **kwargs) -> "Scenario":
        from dataclasses import replace as _replace

        return _replace(self, **kwargs)


def _get(cfg: dict, path: str, default=None, required: bool = False):
    node = cfg
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            if required:
                raise ConfigError(f"missing required field '{path}'")
            return default
        node = node[key]
    return node


def _fd_from_cfg(cfg: dict, path: str) -> FundamentalDiagram:
    shape = _get(cfg, "shape", "triangular")
    try:
        if shape == "triangular":
            return FundamentalDiagram.triangular(
                v_f=float(cfg["v_f"]), rho_j=float(cfg["rho_j"]), q_max=float(cfg["q_max"])
            )
        if shape == "trapezoidal":
            return FundamentalDiagram.trapezoidal(
                v_f=float(cfg["v_f"]), rho_1=float(cfg["rho_1"]),
                rho_2=float(cfg["rho_2"]), rho_j=float(cfg["rho_j"]),
            )
    except KeyError as exc:
        raise ConfigError(f"missing field '{path}.{exc.args[0]}'") from None
    except DomainError as exc:
        raise ConfigError(f"invalid fundamental diagram at '{path}': {exc}") from None
    raise ConfigError(f"'{path}.shape' must be triangular or trapezoidal, got {shape!r}")


def _reservoir_from_cfg(cfg: dict, rid: str) -> ReservoirParams:
    path = f"reservoirs.{rid}"
    for key in ("L", "fd", "alpha", "beta", "gamma", "eta", "kappa"):
        if key not in cfg:
            raise ConfigError(f"missing field '{path}.{key}'")
    try:
        return ReservoirParams(
            id=rid,
            L=float(cfg["L"]),
            fd=_fd_from_cfg(cfg["fd"], f"{path}.fd"),
            alpha=float(cfg["alpha"]),
            beta=float(cfg["beta"]),
            gamma=float(cfg["gamma"]),
            eta=float(cfg["eta"]),
            kappa=float(cfg["kappa"]),
            B_trip=float(cfg.get("B_trip", 2.5)),
        )
    except DomainError as exc:
        raise ConfigError(f"invalid reservoir '{path}': {exc}") from None


def _demand_from_cfg(cfg: dict) -> DemandModel:
    try:
        profile = [(float(t), float(r)) for t, r in cfg["profile"]]
    except (KeyError, TypeError, ValueError):
        raise ConfigError("'demand.profile' must be a list of [t_hours, rate_veh_per_h] pairs") from None
    if any(profile[i][0] >= profile[i + 1][0] for i in range(len(profile) - 1)):
        raise ConfigError("'demand.profile' breakpoints must be strictly increasing")
    if any(r < 0.0 for _, r in profile):
        raise ConfigError("'demand.profile' rates must be non-negative")
    lengths = {}
    len_cfg = _get(cfg, "trip_length_km", required=True)
    for cls in ("A", "B", "BA"):
        if cls not in len_cfg:
            raise ConfigError(f"missing field 'demand.trip_length_km.{cls}'")
        c = len_cfg[cls]
        try:
            lengths[cls] = TripLengthDist(
                kind=c.get("dist", "lognormal"), mean=float(c["mean"]), std=float(c.get("std", 0.0))
            )
        except (KeyError, DomainError) as exc:
            raise ConfigError(f"invalid 'demand.trip_length_km.{cls}': {exc}") from None
    od = _get(cfg, "od_shares", required=True)
    for key in ("AA", "AB", "BA", "BB"):
        if key not in od:
            raise ConfigError(f"missing field 'demand.od_shares.{key}'")
    ceiling = cfg.get("demand_ceiling", {})
    initial = cfg.get("initial_vehicles", {})
    try:
        return DemandModel(
            profile=profile,
            share_A=float(_get(cfg, "share_A", required=True)),
            od_shares={k: float(od[k]) for k in ("AA", "AB", "BA", "BB")},
            lengths=lengths,
            detour_enabled=bool(cfg.get("detour_enabled", False)),
            kappa_delta=float(cfg.get("detour_elasticity", 0.0)),
            forecast_error_bound=float(cfg.get("forecast_error_bound", 0.0)),
            demand_ceiling=(
                float(ceiling.get("A", 1e9)),
                float(ceiling.get("B", 1e9)),
            ),
            initial_vehicles=(int(initial.get("A", 0)), int(initial.get("B", 0))),
        )
    except DomainError as exc:
        raise ConfigError(f"invalid 'demand': {exc}") from None


def scenario_from_dict(cfg: dict, name: str = "scenario") -> Scenario:
    for key in ("reservoirs", "demand"):
        if key not in cfg:
            raise ConfigError(f"missing required field '{key}'")
    for rid in ("A", "B"):
        if rid not in cfg["reservoirs"]:
            raise ConfigError(f"missing field 'reservoirs.{rid}'")
    try:
        weights_cfg = cfg.get("weights", {})
        weights = CostWeights(
            c_T=float(weights_cfg.get("c_T", 1.0)),
            lambda_tradeoff=float(weights_cfg.get("lambda_tradeoff", 0.0)),
            theta=float(weights_cfg.get("theta", 0.0)),
            c_S_override=(
                float(weights_cfg["c_S"]) if "c_S" in weights_cfg else None
            ),
        )
        gates = GatesConfig(**{k: float(v) for k, v in cfg.get("gates", {}).items()})
        sim = SimConfig(**{k: float(v) for k, v in cfg.get("sim", {}).items()})
        ctrl_cfg = dict(cfg.get("controller", {}))
        if "rollout_seed" in ctrl_cfg:
            ctrl_cfg["rollout_seed"] = int(ctrl_cfg["rollout_seed"])
        controller = ControllerConfig(**ctrl_cfg)
        mc_cfg = cfg.get("mc", {})
        mc = MonteCarloConfig(
            n_runs=int(mc_cfg.get("n_runs", 300)),
            base_seed=int(mc_cfg.get("base_seed", 20240001)),
            n_workers=int(mc_cfg.get("n_workers", 0)),
        )
    except TypeError as exc:
        raise ConfigError(f"unknown or malformed configuration field: {exc}") from None

    scenario = Scenario(
        name=str(cfg.get("name", name)),
        reservoir_A=_reservoir_from_cfg(cfg["reservoirs"]["A"], "A"),
        reservoir_B=_reservoir_from_cfg(cfg["reservoirs"]["B"], "B"),
        demand=_demand_from_cfg(cfg["demand"]),
        gates=gates,
        weights=weights,
        sim=sim,
        controller=controller,
        mc=mc,
        raw=cfg,
    )
    demand_end = max((t for t, _ in scenario.demand.profile), default=0.0)
    if scenario.sim.horizon_h + 1e-9 < demand_end + scenario.sim.clearance_min / 60.0:
        raise ConfigError(
            "sim.horizon_min must cover the demand duration plus the clearance phase"
        )
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    """Serialize back to the JSON schema (inverse of scenario_from_dict)."""

    def fd_dict(fd: FundamentalDiagram) -> dict:
        if fd.shape == "triangular":
            return {"shape": "triangular", "v_f": fd.v_f, "rho_j": fd.rho_j, "q_max": fd.q_max}
        return {"shape": "trapezoidal", "v_f": fd.v_f, "rho_1": fd.rho_c, "rho_2": fd.rho_2, "rho_j": fd.rho_j}

    def res_dict(p: ReservoirParams) -> dict:
        return {"L": p.L, "fd": fd_dict(p.fd), "alpha": p.alpha, "beta": p.beta,
                "gamma": p.gamma, "eta": p.eta, "kappa": p.kappa, "B_trip": p.B_trip}

    d = s.demand
    out = {
        "name": s.name,
        "reservoirs": {"A": res_dict(s.reservoir_A), "B": res_dict(s.reservoir_B)},
        "demand": {
            "profile": [[t, r] for t, r in d.profile],
            "share_A": d.share_A,
            "od_shares": dict(d.od_shares),
            "trip_length_km": {
                cls: {"dist": dist.kind, "mean": dist.mean, "std": dist.std}
                for cls, dist in d.lengths.items()
            },
            "detour_enabled": d.detour_enabled,
            "detour_elasticity": d.kappa_delta,
            "forecast_error_bound": d.forecast_error_bound,
            "demand_ceiling": {"A": d.demand_ceiling[0], "B": d.demand_ceiling[1]},
            "initial_vehicles": {"A": d.initial_vehicles[0], "B": d.initial_vehicles[1]},
        },
        "gates": {"u_max_AB": s.gates.u_max_AB, "u_max_BA": s.gates.u_max_BA,
                  "u_min_AB": s.gates.u_min_AB, "u_min_BA": s.gates.u_min_BA},
        "weights": {"c_T": s.weights.c_T, "lambda_tradeoff": s.weights.lambda_tradeoff,
                    "theta": s.weights.theta},
        "sim": {"dt_s": s.sim.dt_s, "horizon_min": s.sim.horizon_min,
                "clearance_min": s.sim.clearance_min, "flow_bin_s": s.sim.flow_bin_s},
        "controller": {"policy": s.controller.policy, "threshold_mode": s.controller.threshold_mode,
                       "trigger": s.controller.trigger, "control_interval_s": s.controller.control_interval_s,
                       "prediction_horizon_min": s.controller.prediction_horizon_min,
                       "rollout_dt_s": s.controller.rollout_dt_s, "rollout_seed": s.controller.rollout_seed},
        "mc": {"n_runs": s.mc.n_runs, "base_seed": s.mc.base_seed, "n_workers": s.mc.n_workers},
    }
    if s.weights.c_S_override is not None:
        out["weights"]["c_S"] = s.weights.c_S_override
    return out


def parse_scenario(path: str | Path) -> Scenario:
    """Load and fully validate a scenario JSON file."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_scenario_path(p.name)
        if bundled is not None:
            p = bundled
        else:
            raise ConfigError(f"scenario file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be a JSON object")
    return scenario_from_dict(cfg, name=p.stem)


def bundled_scenario_path(name: str) -> Path | None:
    """Resolve a scenario bundled with the package (e.g. 'copenhagen_base.json')."""
    if not name.endswith(".json"):
        name += ".json"
    ref = resources.files("perimsim") / "scenarios" / name
    try:
        with resources.as_file(ref) as concrete:
            if concrete.exists():
                return Path(str(concrete))
    except (FileNotFoundError, ModuleNotFoundError):
        return None
    return None


def bundled_scenario(name: str) -> Scenario:
    path = bundled_scenario_path(name)
    if path is None:
        raise ConfigError(f"no bundled scenario named {name!r}")
    return parse_scenario(path)
