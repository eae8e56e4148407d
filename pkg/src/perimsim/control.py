"""Gating policies: threshold search, rollout costing, event-triggered MPC.

The control signal is bang-bang: each gate holds one of two levels and the
optimal open-loop plan switches at most once between accident events. The
planner therefore searches a single threshold time per solve (coarse
minute grid, golden-section refinement, one-second lattice polish) against
a deterministic expected-dynamics rollout of the full particle model.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .bathtub import GridlockError, SystemState, DemandModel
from .config import CostWeights, Scenario
from .fundamentals import DomainError
from .hawkes import MomentState

_SEC = 1.0 / 3600.0
_MIN = 1.0 / 60.0


@dataclass(frozen=True)
class GatePolicy:
    """A bang-bang control trajectory for both gates.

    ``threshold`` policies meter the B->A gate: in ``closed_until`` mode the
    gate holds its low level before ``t_star`` and its high level after;
    ``open_until`` is the reverse. The A->B gate rides at its high level.
    """

    kind: str  # no_control | steady_state | threshold
    t_star: float = 0.0
    mode: str = "closed_until"
    levels_AB: tuple[float, float] = (0.0, 0.0)  # (u_min, u_max) veh/h
    levels_BA: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.kind not in ("no_control", "steady_state", "threshold"):
            raise DomainError(f"unknown policy kind {self.kind!r}")
        if self.mode not in ("closed_until", "open_until"):
            raise DomainError(f"unknown threshold mode {self.mode!r}")

    @classmethod
    def no_control(cls, u_bar: tuple[float, float]) -> "GatePolicy":
        return cls(kind="no_control", levels_AB=(u_bar[0], u_bar[0]), levels_BA=(u_bar[1], u_bar[1]))

    @classmethod
    def steady(cls, u_AB: float, u_BA: float) -> "GatePolicy":
        return cls(kind="steady_state", levels_AB=(u_AB, u_AB), levels_BA=(u_BA, u_BA))

    def u_at(self, t: float) -> tuple[float, float]:
        """Gate levels (u_AB, u_BA) commanded at time t (hours)."""
        if self.kind in ("no_control", "steady_state"):
            return self.levels_AB[1], self.levels_BA[1]
        before = t < self.t_star
        if self.mode == "closed_until":
            u_ba = self.levels_BA[0] if before else self.levels_BA[1]
        else:
            u_ba = self.levels_BA[1] if before else self.levels_BA[0]
        return self.levels_AB[1], u_ba

    def ba_closed_at(self, t: float) -> bool:
        u_ab, u_ba = self.u_at(t)
        return u_ba <= self.levels_BA[0]


@dataclass(frozen=True)
class PiecewisePolicy:
    """Piecewise-constant gate levels on explicit segment start times.

    Used by enumeration oracles; segment boundaries should align with the
    rollout step grid so the evaluation is exact.
    """

    times: tuple  # ascending segment start times (hours)
    u_ab: tuple
    u_ba: tuple
    kind: str = "piecewise"

    def u_at(self, t: float) -> tuple[float, float]:
        k = 0
        for i, start in enumerate(self.times):
            if t >= start - 1e-12:
                k = i
            else:
                break
        return self.u_ab[k], self.u_ba[k]


@dataclass
class RolloutResult:
    """Deterministic prediction of one policy's cost over the horizon."""

    J: float
    delay_integral: float  # veh-hours in system (queues included)
    m_T: float  # predicted accident count at horizon end
    var_T: float  # predicted count variance at horizon end
    c_T: float
    c_S: float
    theta_h: float
    trajectory: list = field(default_factory=list)  # (t, N_A, N_B, queued)


def _fresh_rollout_state(scenario: Scenario, state: SystemState | None,
                         demand: DemandModel | None) -> SystemState:
    """Expected-mode copy of the current state with its own forecast rng."""
    rng = np.random.default_rng(scenario.controller.rollout_seed)
    if state is None:
        rollout = SystemState(
            scenario.reservoir_A, scenario.reservoir_B,
            demand if demand is not None else scenario.demand,
            scenario.u_bar, rng=rng, mode="expected",
        )
        rollout.seed_initial_vehicles()
    else:
        rollout = state.clone(mode="expected", rng=rng)
        if demand is not None:
            rollout.demand = demand
    rollout.moments = MomentState()
    rollout.delay_veh_h = 0.0
    return rollout


def _advance_policy(state: SystemState, policy: GatePolicy, t_to: float, dt_roll: float,
                    trajectory: list | None = None) -> None:
    """Drive a rollout state to t_to, splitting the step that contains t_star."""
    while state.t < t_to - 1e-12:
        t = state.t
        t_next = min(t + dt_roll, t_to)
        if policy.kind == "threshold" and t < policy.t_star < t_next - 1e-15:
            state.advance(policy.u_at(t), policy.t_star - t)
            state.advance(policy.u_at(policy.t_star), t_next - policy.t_star)
        else:
            state.advance(policy.u_at(t), t_next - t)
        if trajectory is not None:
            trajectory.append((state.t, state.N[0], state.N[1],
                               state.queue_len(0) + state.queue_len(1)))


def rollout_cost(scenario: Scenario, policy: GatePolicy, horizon: float | None = None,
                 state: SystemState | None = None, weights: CostWeights | None = None,
                 demand: DemandModel | None = None, keep_trajectory: bool = False) -> RolloutResult:
    """Expected-dynamics cost of a policy from the given (or initial) state.

    Accident jumps are replaced by their intensity feeding the mean live
    load and the moment pair (m, s); the returned J is
    c_T * delay + c_S * m_T + theta * (s_T - m_T^2). Gridlock during the
    rollout yields J = inf.
    """
    w = weights if weights is not None else scenario.weights
    c_S = w.c_S(scenario.planned_vehicles())
    theta_h = w.theta_h
    rollout = _fresh_rollout_state(scenario, state, demand)
    t0 = rollout.t
    h = horizon if horizon is not None else scenario.controller.prediction_horizon_min * _MIN
    t_end = min(t0 + h, scenario.sim.horizon_h)
    trajectory: list | None = [] if keep_trajectory else None
    try:
        _advance_policy(rollout, policy, t_end, scenario.controller.rollout_dt_s * _SEC, trajectory)
    except GridlockError:
        return RolloutResult(J=math.inf, delay_integral=math.inf, m_T=math.inf, var_T=math.inf,
                             c_T=w.c_T, c_S=c_S, theta_h=theta_h)
    m_T = rollout.moments.m
    var_T = rollout.moments.variance
    delay = rollout.delay_veh_h
    J = w.c_T * delay + c_S * m_T + theta_h * var_T
    return RolloutResult(J=J, delay_integral=delay, m_T=m_T, var_T=var_T,
                         c_T=w.c_T, c_S=c_S, theta_h=theta_h,
                         trajectory=trajectory or [])


def _round_s(t_h: float) -> int:
    return int(round(t_h * 3600.0))


def optimize_threshold(scenario: Scenario, weights: CostWeights | None = None,
                       mode: str | None = None, state: SystemState | None = None,
                       incumbent: float | None = None, demand: DemandModel | None = None,
                       trace: list | None = None) -> GatePolicy:
    """Best single-threshold policy by coarse grid + golden section + polish.

    The coarse scan walks the absolute one-minute lattice sharing the
    pre-threshold trajectory between candidates; golden-section narrows to
    one second and a final +-2 s lattice polish pins the minimizer to the
    absolute second grid, which keeps re-solves reproducible. When an
    ``incumbent`` threshold ties the optimum it is kept (no pointless
    re-switching). Deterministic given (scenario, state).
    """
    w = weights if weights is not None else scenario.weights
    mode = mode if mode is not None else scenario.controller.threshold_mode
    c_S = w.c_S(scenario.planned_vehicles())
    theta_h = w.theta_h
    gates = scenario.gates
    dt_roll = scenario.controller.rollout_dt_s * _SEC

    state0 = _fresh_rollout_state(scenario, state, demand)
    t_now = state0.t
    horizon = scenario.controller.prediction_horizon_min * _MIN
    t_end = min(t_now + horizon, scenario.sim.horizon_h)

    def make_policy(t_star: float) -> GatePolicy:
        return GatePolicy(
            kind="threshold", t_star=t_star, mode=mode,
            levels_AB=(gates.u_min_AB, gates.u_max_AB),
            levels_BA=(gates.u_min_BA, gates.u_max_BA),
        )

    def cost_of(rollout: SystemState) -> float:
        return w.c_T * rollout.delay_veh_h + c_S * rollout.moments.m + theta_h * rollout.moments.variance

    memo: dict[int, float] = {}
    snap: dict = {"state": None, "t": -1.0}  # prefix snapshot for refinement evals

    def eval_standalone(t_star: float) -> float:
        key = int(round(t_star * 3600.0 * 1e6))
        if key in memo:
            return memo[key]
        policy = make_policy(t_star)
        if snap["state"] is not None and snap["t"] <= t_star + 1e-15:
            rollout = snap["state"].clone(rng=copy.deepcopy(snap["state"].rng))
        else:
            rollout = state0.clone(rng=copy.deepcopy(state0.rng))
        try:
            _advance_policy(rollout, policy, t_end, dt_roll)
            J = cost_of(rollout)
        except GridlockError:
            J = math.inf
        memo[key] = J
        if trace is not None:
            trace.append((t_star, J))
        return J

    # coarse scan on the absolute one-minute lattice, sharing the prefix
    first_min = math.ceil(_round_s(t_now) / 60.0) * 60
    candidates = sorted({_round_s(t_now), _round_s(t_end)}
                        | {s for s in range(first_min, _round_s(t_end) + 1, 60)}
                        | ({_round_s(incumbent)} if incumbent is not None
                           and t_now - 1e-12 <= incumbent <= t_end + 1e-12 else set()))
    pre_policy = make_policy(t_end + 1.0)  # holds the pre-threshold level throughout
    walker = state0.clone(rng=copy.deepcopy(state0.rng))
    best_t, best_J = None, math.inf
    gridlocked_prefix = False
    for c_s in candidates:
        c = c_s * _SEC
        if not gridlocked_prefix:
            try:
                _advance_policy(walker, pre_policy, c, dt_roll)
            except GridlockError:
                gridlocked_prefix = True
        key = int(round(c * 3600.0 * 1e6))
        if key in memo:
            J = memo[key]
        elif gridlocked_prefix:
            J = memo[key] = math.inf
        else:
            tail = walker.clone(rng=copy.deepcopy(walker.rng))
            try:
                _advance_policy(tail, make_policy(c), t_end, dt_roll)
                J = cost_of(tail)
            except GridlockError:
                J = math.inf
            memo[key] = J
            if trace is not None:
                trace.append((c, J))
        if J < best_J:
            best_t, best_J = c, J

    if best_t is None or math.isinf(best_J):
        return make_policy(t_end)

    # golden-section refinement to one-second resolution; later evaluations
    # restart from a shared prefix snapshot at the bracket's left edge
    a = max(t_now, best_t - _MIN)
    b = min(t_end, best_t + _MIN)
    pre = state0.clone(rng=copy.deepcopy(state0.rng))
    try:
        _advance_policy(pre, pre_policy, a, dt_roll)
        snap["state"], snap["t"] = pre, a
    except GridlockError:
        pass
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    while (b - a) > _SEC:
        c = b - phi * (b - a)
        d = a + phi * (b - a)
        if eval_standalone(c) <= eval_standalone(d):
            b = d
        else:
            a = c
    for t in (a, 0.5 * (a + b), b):
        J = eval_standalone(t)
        if J < best_J:
            best_t, best_J = t, J

    # polish: pin to the absolute one-second lattice around the best point
    center = _round_s(best_t)
    for s in range(center - 2, center + 3):
        t = s * _SEC
        if t_now - 1e-12 <= t <= t_end + 1e-12:
            J = eval_standalone(t)
            if J < best_J - 1e-12 * (1.0 + abs(best_J)) or (
                J <= best_J + 1e-12 * (1.0 + abs(best_J)) and t < best_t
            ):
                best_t, best_J = t, J

    if incumbent is not None and t_now - 1e-12 <= incumbent <= t_end + 1e-12:
        J_inc = eval_standalone(incumbent)
        if J_inc <= best_J + 1e-9 * (1.0 + abs(best_J)):
            return make_policy(incumbent)
    return make_policy(best_t)


class ThresholdMPC:
    """Receding-horizon threshold controller, event-triggered by default.

    Solves once at t=0 and re-optimizes from the measured state whenever an
    accident is recorded (``event`` trigger) or at every control interval
    (``periodic``). Between solves the cached policy is applied unchanged.
    """

    def __init__(self, scenario: Scenario, weights: CostWeights | None = None,
                 rng: np.random.Generator | None = None,
                 initial_policy: GatePolicy | None = None):
        self.scenario = scenario
        self.weights = weights if weights is not None else scenario.weights
        self.trigger = scenario.controller.trigger
        self.tau_c = scenario.controller.control_interval_s * _SEC
        if scenario.demand.forecast_error_bound > 0.0 and rng is not None:
            self.demand_forecast: DemandModel | None = scenario.demand.with_rate_noise(rng)
        else:
            self.demand_forecast = None
        self.policy = initial_policy
        self.n_solves = 1 if initial_policy is not None else 0
        self.solve_times: list[float] = []
        self._next_mark = self.tau_c
        self._last_u_ba: float | None = None
        self._switches = 0

    def initialize(self, state: SystemState | None = None) -> GatePolicy:
        if self.policy is None:
            self.policy = optimize_threshold(
                self.scenario, weights=self.weights, state=state,
                demand=self.demand_forecast,
            )
            self.n_solves += 1
            self.solve_times.append(0.0 if state is None else state.t)
        return self.policy

    def levels(self, t: float) -> tuple[float, float]:
        if self.policy is None:
            self.initialize()
        u = self.policy.u_at(t)
        if self._last_u_ba is not None and u[1] != self._last_u_ba:
            self._switches += 1
        self._last_u_ba = u[1]
        return u

    def notify_step(self, state: SystemState, new_accidents: int) -> None:
        """Post-step hook: re-solve on trigger with the measured state."""
        if self.trigger == "event":
            if new_accidents > 0:
                self._resolve(state)
        else:
            if state.t >= self._next_mark - 1e-9:
                while state.t >= self._next_mark - 1e-9:
                    self._next_mark += self.tau_c
                self._resolve(state)

    def _resolve(self, state: SystemState) -> None:
        """Re-plan from the measured state within the remaining switch budget.

        Open-loop optima switch at most once more than the number of accident
        events, so a re-plan may only schedule a further switch while that
        budget is positive; otherwise the current level is held to the horizon
        (without invoking the optimizer).
        """
        closed_now = self.policy.ba_closed_at(state.t)
        anchor_mode = "closed_until" if closed_now else "open_until"
        budget = 1 + state.n_acc[0] + state.n_acc[1] - self._switches
        if budget <= 0:
            # a threshold beyond the horizon freezes the pre-switch level
            hold_mode = "closed_until" if closed_now else "open_until"
            self.policy = GatePolicy(
                kind="threshold", t_star=self.scenario.sim.horizon_h + 1.0,
                mode=hold_mode, levels_AB=self.policy.levels_AB,
                levels_BA=self.policy.levels_BA,
            )
            return
        if anchor_mode == self.policy.mode:
            incumbent = self.policy.t_star
        else:
            # no further switch planned: keep the current level to the horizon
            incumbent = self.scenario.sim.horizon_h
        self.policy = optimize_threshold(
            self.scenario, weights=self.weights, mode=anchor_mode, state=state,
            incumbent=incumbent, demand=self.demand_forecast,
        )
        self.n_solves += 1
        self.solve_times.append(state.t)
