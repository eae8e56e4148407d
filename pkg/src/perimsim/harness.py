"""Seeded Monte-Carlo execution, aggregation and the experiment matrix.

Runs are deterministic given (scenario, policy, seed); the batch uses seeds
base_seed .. base_seed+n-1 so extending a batch never perturbs existing
runs. Aggregation is a pure order-independent reduction, so runs may be
farmed out to a worker pool.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .bathtub import GridlockError, SystemState
from .config import Scenario
from .control import GatePolicy, ThresholdMPC, optimize_threshold, rollout_cost
from .steady_state import steady_state_gates, steady_state_occupancies

_MIN = 1.0 / 60.0

#: RunResult scalar fields that get aggregated into means and standard errors.
METRIC_KEYS = (
    "mean_travel_time", "objective_per_vehicle", "accidents_total",
    "accidents_A", "accidents_B", "completed", "unfinished", "n_solves",
    "delay_veh_h",
)


@dataclass
class RunResult:
    """Metrics of one simulated realization."""

    seed: int
    policy: str
    mean_travel_time: float  # min per vehicle, queue wait included
    objective_per_vehicle: float  # min per vehicle: c_T*tt + lambda*accidents
    accidents_total: int
    accidents_A: int
    accidents_B: int
    entered: int
    completed: int
    unfinished: int
    delay_veh_h: float
    n_solves: int
    switch_times: list = field(default_factory=list)
    flow_ba: np.ndarray = field(default_factory=lambda: np.zeros(0))  # veh/h per bin
    flow_bin_s: float = 60.0
    t_star: float | None = None
    gridlocked: bool = False
    series: np.ndarray | None = None
    event_log: list = field(default_factory=list)


@dataclass
class Aggregate:
    """Monte-Carlo summary: per-metric means and standard errors."""

    policy: str
    n_runs: int
    n_failed: int
    means: dict
    ses: dict
    flow_mean: np.ndarray
    flow_bin_s: float
    runs: list

    def pct_change_vs(self, baseline: "Aggregate", key: str) -> float:
        base = baseline.means[key]
        if base == 0.0:
            return math.nan
        return 100.0 * (self.means[key] - base) / base


def _steady_policy(scenario: Scenario) -> GatePolicy:
    demand = scenario.demand
    f_a, f_b = demand.origin_rates(0.0)
    n_star = steady_state_occupancies(f_a, f_b, scenario.reservoir_A, scenario.reservoir_B)
    u_ab, u_ba = steady_state_gates(
        n_star, f_a, f_b, scenario.reservoir_A, scenario.reservoir_B, scenario.u_bar
    )
    return GatePolicy.steady(u_ab, u_ba)


def run_simulation(scenario: Scenario, policy_kind: str, seed: int,
                   initial_policy: GatePolicy | None = None,
                   keep_series: bool = False) -> RunResult:
    """One full realization; deterministic given (scenario, policy_kind, seed)."""
    rng = np.random.default_rng(seed)
    sim = scenario.sim
    state = SystemState(
        scenario.reservoir_A, scenario.reservoir_B, scenario.demand,
        scenario.u_bar, rng=rng, mode="sampled", record=True, est_steps=sim.n_steps,
    )
    state.seed_initial_vehicles()
    mpc: ThresholdMPC | None = None
    if policy_kind == "no_control":
        policy = GatePolicy.no_control(scenario.u_bar)
    elif policy_kind == "steady_state":
        policy = _steady_policy(scenario)
    elif policy_kind == "threshold":
        mpc = ThresholdMPC(scenario, rng=rng, initial_policy=initial_policy)
        policy = mpc.initialize()
    else:
        raise ValueError(f"unknown policy kind {policy_kind!r}")

    dt_h = sim.dt_h
    gridlocked = False
    try:
        for k in range(sim.n_steps):
            t = k * dt_h
            u = mpc.levels(t) if mpc is not None else policy.u_at(t)
            before = state.n_acc[0] + state.n_acc[1]
            state.advance(u, dt_h)
            if mpc is not None:
                mpc.notify_step(state, state.n_acc[0] + state.n_acc[1] - before)
    except GridlockError:
        gridlocked = True

    tt_h, unfinished = state.travel_times()
    entered = state.entered
    mean_tt = 60.0 * float(tt_h.mean()) if entered else 0.0
    accidents = state.n_acc[0] + state.n_acc[1]
    objective = scenario.weights.c_T * mean_tt + scenario.weights.lambda_tradeoff * accidents

    series = state.series()
    cols = {"t": 0, "u_AB": 5, "u_BA": 6, "released_BA": 8}
    switch_times: list[float] = []
    if series.shape[0] > 1:
        for col in ("u_AB", "u_BA"):
            u_col = series[:, cols[col]]
            changes = np.nonzero(np.diff(u_col) != 0.0)[0]
            switch_times.extend(float(series[i, 0]) for i in changes)
    switch_times.sort()

    bin_steps = max(1, int(round(sim.flow_bin_s / sim.dt_s)))
    rel = series[:, cols["released_BA"]]
    n_bins = int(math.ceil(rel.shape[0] / bin_steps)) if rel.shape[0] else 0
    flow_ba = np.zeros(n_bins)
    for b in range(n_bins):
        flow_ba[b] = rel[b * bin_steps: (b + 1) * bin_steps].mean()

    return RunResult(
        seed=seed, policy=policy_kind,
        mean_travel_time=mean_tt, objective_per_vehicle=objective,
        accidents_total=accidents, accidents_A=state.n_acc[0], accidents_B=state.n_acc[1],
        entered=entered, completed=state.completed, unfinished=unfinished,
        delay_veh_h=state.delay_veh_h,
        n_solves=mpc.n_solves if mpc is not None else 0,
        switch_times=switch_times, flow_ba=flow_ba, flow_bin_s=sim.flow_bin_s,
        t_star=(mpc.policy.t_star if mpc is not None and mpc.policy.kind == "threshold" else None),
        gridlocked=gridlocked,
        series=series if keep_series else None,
        event_log=list(state.event_log),
    )


def _mc_worker(args) -> RunResult:
    scenario, policy_kind, seed, initial_policy = args
    return run_simulation(scenario, policy_kind, seed, initial_policy=initial_policy)


def precompute_initial_policy(scenario: Scenario, policy_kind: str) -> GatePolicy | None:
    """Shared t=0 solve for threshold runs (exact: the solve is state-free).

    Only valid with a noise-free demand forecast; with forecast noise every
    run must solve from its own perturbed profile.
    """
    if policy_kind != "threshold" or scenario.demand.forecast_error_bound > 0.0:
        return None
    return optimize_threshold(scenario)


def run_monte_carlo(scenario: Scenario, policy_kind: str, n_runs: int | None = None,
                    base_seed: int | None = None, n_workers: int | None = None,
                    initial_policy: GatePolicy | None = None) -> Aggregate:
    """Seeded batch of independent runs reduced to means and standard errors."""
    n_runs = n_runs if n_runs is not None else scenario.mc.n_runs
    base_seed = base_seed if base_seed is not None else scenario.mc.base_seed
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    if initial_policy is None:
        initial_policy = precompute_initial_policy(scenario, policy_kind)
    if n_workers is None:
        n_workers = scenario.mc.n_workers or (os.cpu_count() or 1)
    tasks = [(scenario, policy_kind, base_seed + i, initial_policy) for i in range(n_runs)]
    if n_workers <= 1 or n_runs < 4:
        results = [_mc_worker(t) for t in tasks]
    else:
        import multiprocessing as mp

        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
        with ctx.Pool(min(n_workers, n_runs)) as pool:
            results = pool.map(_mc_worker, tasks, chunksize=max(1, n_runs // (4 * n_workers)))
    return aggregate(results, policy_kind)


def aggregate(results: list[RunResult], policy: str) -> Aggregate:
    ok = [r for r in results if not r.gridlocked]
    failed = len(results) - len(ok)
    if failed:
        warnings.warn(f"{failed} of {len(results)} runs hit gridlock and were excluded", RuntimeWarning)
    if failed > 0.05 * len(results):
        raise RuntimeError(
            f"{failed}/{len(results)} runs failed with gridlock; scenario is mis-calibrated"
        )
    means, ses = {}, {}
    for key in METRIC_KEYS:
        vals = np.array([getattr(r, key) for r in ok], dtype=float)
        means[key] = float(vals.mean())
        ses[key] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    n_bins = max((r.flow_ba.shape[0] for r in ok), default=0)
    flow = np.zeros(n_bins)
    for r in ok:
        flow[: r.flow_ba.shape[0]] += r.flow_ba
    if ok:
        flow /= len(ok)
    return Aggregate(
        policy=policy, n_runs=len(ok), n_failed=failed, means=means, ses=ses,
        flow_mean=flow, flow_bin_s=ok[0].flow_bin_s if ok else 60.0, runs=ok,
    )


@dataclass
class SweepResult:
    """Full experiment matrix plus the risk-aversion frontier."""

    baselines: dict  # rate name -> Aggregate (no_control)
    cells: dict  # (rate name, weight) -> Aggregate (threshold)
    frontier: list  # rows: dict(theta, predicted mean/var, empirical stats)
    weights: list
    theta_list: list


def sweep(scenarios: dict, weights: list[float], theta_list: list[float] | None = None,
          n_runs: int | None = None, base_seed: int | None = None,
          n_workers: int | None = None, frontier_rate: str | None = None) -> SweepResult:
    """Accident-rate x safety-weight matrix plus a theta frontier.

    ``scenarios`` maps rate names (e.g. base/high) to configured scenarios;
    each cell reruns the threshold controller with the given trade-off
    weight at theta = 0, against one shared no-control baseline per rate.
    """
    theta_list = theta_list or []
    baselines: dict = {}
    cells: dict = {}
    for rate, sc in scenarios.items():
        baselines[rate] = run_monte_carlo(sc, "no_control", n_runs, base_seed, n_workers)
        for wgt in weights:
            sc_w = sc.replace(weights=replace(sc.weights, lambda_tradeoff=wgt, theta=0.0))
            cells[(rate, wgt)] = run_monte_carlo(sc_w, "threshold", n_runs, base_seed, n_workers)
    frontier = []
    if theta_list:
        rate = frontier_rate if frontier_rate is not None else next(iter(scenarios))
        sc = scenarios[rate]
        for theta in theta_list:
            sc_t = sc.replace(weights=replace(sc.weights, theta=theta))
            policy = optimize_threshold(sc_t)
            predicted = rollout_cost(sc_t, policy)
            agg = run_monte_carlo(sc_t, "threshold", n_runs, base_seed, n_workers,
                                  initial_policy=policy)
            acc = np.array([r.accidents_total for r in agg.runs], dtype=float)
            frontier.append({
                "theta": theta,
                "t_star_min": policy.t_star / _MIN,
                "predicted_mean_acc": predicted.m_T,
                "predicted_var_acc": predicted.var_T,
                "mean_acc": float(acc.mean()),
                "std_acc": float(acc.std(ddof=1)) if acc.size > 1 else 0.0,
                "mean_travel_time": agg.means["mean_travel_time"],
            })
    return SweepResult(baselines=baselines, cells=cells, frontier=frontier,
                       weights=list(weights), theta_list=list(theta_list))
