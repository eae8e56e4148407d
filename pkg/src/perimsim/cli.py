"""Command-line interface: simulate, mc, sweep, steady-state, validate.

All numeric CSV output uses full-precision repr so re-running a command
with the same configuration and seeds reproduces byte-identical files.
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .bathtub import SERIES_COLUMNS
from .charts import line_chart
from .config import ConfigError, Scenario, parse_scenario
from .steady_state import (InfeasibleDemandError, risk_adjusted_occupancies,
                           steady_state_gates)

_MIN = 1.0 / 60.0


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class OutputBundle:
    """Tracks emitted files; removes partial output on failure."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        p = self.path(name)
        lines = [",".join(header)]
        lines.extend(",".join(_fmt(v) for v in row) for row in rows)
        p.write_text("\n".join(lines) + "\n")
        return p

    def finalize(self) -> Path:
        manifest = {
            "files": {
                f.name: hashlib.sha256(f.read_bytes()).hexdigest()
                for f in self.files if f.exists()
            }
        }
        p = self.dir / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return p

    def discard(self) -> None:
        for f in self.files:
            if f.exists():
                f.unlink()


def _write_run_series(bundle: OutputBundle, result: harness.RunResult) -> None:
    bundle.write_csv("series.csv", list(SERIES_COLUMNS), result.series)
    bundle.write_csv(
        "events.csv", ["t", "reservoir", "lambda_at_event", "chi_after"], result.event_log
    )


def _runs_rows(agg: harness.Aggregate):
    for r in agg.runs:
        yield [r.seed, r.policy, r.mean_travel_time, r.objective_per_vehicle,
               r.accidents_total, r.accidents_A, r.accidents_B, r.entered, r.completed,
               r.unfinished, r.delay_veh_h, r.n_solves,
               r.t_star if r.t_star is not None else "",
               ";".join(_fmt(t) for t in r.switch_times)]


_RUNS_HEADER = ["seed", "policy", "mean_travel_time_min", "objective_per_vehicle_min",
                "accidents_total", "accidents_A", "accidents_B", "entered", "completed",
                "unfinished", "delay_veh_h", "n_solves", "t_star_h", "switch_times_h"]


def _write_aggregate(bundle: OutputBundle, name: str, aggs: dict) -> None:
    rows = []
    for label, agg in aggs.items():
        for key in harness.METRIC_KEYS:
            rows.append([label, agg.policy, agg.n_runs, key, agg.means[key], agg.ses[key]])
    bundle.write_csv(name, ["cell", "policy", "n_runs", "metric", "mean", "se"], rows)


def _cmd_simulate(args) -> int:
    scenario = parse_scenario(args.config)
    if args.mode:
        scenario = scenario.replace(
            controller=replace(scenario.controller, threshold_mode=args.mode))
    bundle = OutputBundle(Path(args.out))
    try:
        result = harness.run_simulation(
            scenario, args.policy, args.seed if args.seed is not None else scenario.mc.base_seed,
            keep_series=True,
        )
        _write_run_series(bundle, result)
        bundle.write_csv("runs.csv", _RUNS_HEADER, _runs_rows(
            harness.aggregate([result], args.policy)))
        if args.trace and args.policy == "threshold":
            from .control import optimize_threshold

            trace: list = []
            optimize_threshold(scenario, trace=trace)
            bundle.write_csv("optimizer_trace.csv", ["t_star_h", "J"], trace)
        bundle.finalize()
    except Exception:
        bundle.discard()
        raise
    print(f"simulate: policy={args.policy} seed={result.seed} "
          f"tt={result.mean_travel_time:.2f} min obj={result.objective_per_vehicle:.2f} "
          f"accidents={result.accidents_total} -> {bundle.dir}")
    return 0


def _cmd_mc(args) -> int:
    scenario = parse_scenario(args.config)
    if args.mode:
        scenario = scenario.replace(
            controller=replace(scenario.controller, threshold_mode=args.mode))
    n_runs = args.runs if args.runs is not None else scenario.mc.n_runs
    seed = args.seed if args.seed is not None else scenario.mc.base_seed
    bundle = OutputBundle(Path(args.out))
    try:
        agg = harness.run_monte_carlo(scenario, args.policy, n_runs, seed, args.workers)
        baseline = None
        if args.policy != "no_control" and not args.no_baseline:
            baseline = harness.run_monte_carlo(scenario, "no_control", n_runs, seed, args.workers)
        bundle.write_csv("runs.csv", _RUNS_HEADER, _runs_rows(agg))
        aggs = {args.policy: agg}
        if baseline is not None:
            aggs["no_control"] = baseline
        _write_aggregate(bundle, "aggregate.csv", aggs)
        t = (np.arange(agg.flow_mean.shape[0]) + 0.5) * agg.flow_bin_s / 60.0
        flow_rows = [[t[i], agg.flow_mean[i]] + ([baseline.flow_mean[i]] if baseline is not None else [])
                     for i in range(agg.flow_mean.shape[0])]
        header = ["t_min", "flow_ba_controlled_veh_h"] + (
            ["flow_ba_uncontrolled_veh_h"] if baseline is not None else [])
        bundle.write_csv("flow_comparison.csv", header, flow_rows)
        series = {"controlled": (t, agg.flow_mean)}
        if baseline is not None:
            series["uncontrolled"] = (t, baseline.flow_mean)
        line_chart(bundle.path("flow_comparison.svg"), series,
                   "Mean B->A transfer flow", "t (min)", "veh/h")
        if baseline is not None:
            bundle.write_csv("comparison.csv",
                             ["metric", "controlled", "baseline", "pct_change"],
                             [[k, agg.means[k], baseline.means[k], agg.pct_change_vs(baseline, k)]
                              for k in ("mean_travel_time", "objective_per_vehicle", "accidents_total")])
        bundle.finalize()
    except Exception:
        bundle.discard()
        raise
    print(f"mc: {agg.n_runs} runs policy={args.policy} "
          f"tt={agg.means['mean_travel_time']:.2f} min "
          f"accidents={agg.means['accidents_total']:.2f} -> {bundle.dir}")
    return 0


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip() != ""]


def _cmd_sweep(args) -> int:
    scenarios = {"base": parse_scenario(args.config)}
    if args.config_high:
        scenarios["high"] = parse_scenario(args.config_high)
    weights = _parse_float_list(args.weights)
    thetas = _parse_float_list(args.thetas) if args.thetas else []
    n_runs = args.runs
    seed = args.seed
    bundle = OutputBundle(Path(args.out))
    try:
        res = harness.sweep(scenarios, weights, thetas, n_runs, seed, args.workers)
        aggs = {f"{rate}/baseline": agg for rate, agg in res.baselines.items()}
        aggs.update({f"{rate}/w={wgt:g}": agg for (rate, wgt), agg in res.cells.items()})
        _write_aggregate(bundle, "aggregate.csv", aggs)
        all_runs = []
        for label, agg in aggs.items():
            for row in _runs_rows(agg):
                all_runs.append([label] + row)
        bundle.write_csv("runs.csv", ["cell"] + _RUNS_HEADER, all_runs)
        bundle.path("tables.md").write_text(format_tables(res))
        if res.frontier:
            bundle.write_csv("frontier.csv",
                             ["theta", "t_star_min", "predicted_mean_acc", "predicted_var_acc",
                              "mean_acc", "std_acc", "mean_travel_time"],
                             [[row[k] for k in ("theta", "t_star_min", "predicted_mean_acc",
                                                "predicted_var_acc", "mean_acc", "std_acc",
                                                "mean_travel_time")] for row in res.frontier])
            line_chart(bundle.path("frontier.svg"),
                       {"frontier": ([r["std_acc"] for r in res.frontier],
                                     [r["mean_acc"] for r in res.frontier])},
                       "Accident mean vs std across theta", "Std[N_acc]", "E[N_acc]")
        for rate in scenarios:
            base = res.baselines[rate]
            mid = res.cells.get((rate, weights[len(weights) // 2]))
            if mid is None:
                continue
            t = (np.arange(base.flow_mean.shape[0]) + 0.5) * base.flow_bin_s / 60.0
            bundle.write_csv(f"flow_comparison_{rate}.csv",
                             ["t_min", "flow_ba_controlled_veh_h", "flow_ba_uncontrolled_veh_h"],
                             [[t[i], mid.flow_mean[i], base.flow_mean[i]]
                              for i in range(base.flow_mean.shape[0])])
            line_chart(bundle.path(f"flow_comparison_{rate}.svg"),
                       {"controlled": (t, mid.flow_mean), "uncontrolled": (t, base.flow_mean)},
                       f"Mean B->A transfer flow ({rate} rate)", "t (min)", "veh/h")
        bundle.finalize()
    except Exception:
        bundle.discard()
        raise
    print(f"sweep: {len(res.cells)} cells + {len(res.baselines)} baselines -> {bundle.dir}")
    return 0


def format_tables(res: harness.SweepResult) -> str:
    """Travel-time/objective and accident tables with baseline percentages.

    Cell pairs are (mean travel time min/veh, objective min/veh); percentage
    columns are (controlled - baseline)/baseline for each pair member.
    """
    lines = [
        "# Experiment matrix",
        "",
        "Cell convention: pair = (mean travel time [min/veh], objective per vehicle",
        "[min/veh]); percentages are (controlled - baseline)/baseline per member.",
        "",
        "## Travel time and objective per vehicle",
        "",
        "| Scenario | " + " | ".join(f"Weight = {w:.3f}" for w in res.weights) + " |",
        "|---" * (len(res.weights) + 1) + "|",
    ]
    for rate, base in res.baselines.items():
        cells = []
        for wgt in res.weights:
            agg = res.cells[(rate, wgt)]
            base_obj = base.means["mean_travel_time"] + wgt * base.means["accidents_total"]
            obj = agg.means["mean_travel_time"] + wgt * agg.means["accidents_total"]
            d_tt = agg.pct_change_vs(base, "mean_travel_time")
            d_obj = 100.0 * (obj - base_obj) / base_obj if base_obj else float("nan")
            cells.append(f"({agg.means['mean_travel_time']:.2f}, {obj:.2f}) "
                         f"({d_tt:+.1f}%, {d_obj:+.1f}%)")
        lines.append(f"| {rate} (baseline tt {base.means['mean_travel_time']:.2f}) | "
                     + " | ".join(cells) + " |")
    lines += [
        "",
        "## Accidents",
        "",
        "| Scenario | " + " | ".join(f"Weight = {w:.3f}" for w in res.weights) + " |",
        "|---" * (len(res.weights) + 1) + "|",
    ]
    for rate, base in res.baselines.items():
        cells = []
        for wgt in res.weights:
            agg = res.cells[(rate, wgt)]
            cells.append(f"{agg.means['accidents_total']:.2f}, "
                         f"{agg.pct_change_vs(base, 'accidents_total'):+.1f}%")
        lines.append(f"| {rate} (baseline {base.means['accidents_total']:.2f}) | "
                     + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines)


def _cmd_steady_state(args) -> int:
    scenario = parse_scenario(args.config)
    try:
        n_a, n_b = risk_adjusted_occupancies(
            args.F_A + args.F_B, scenario.reservoir_A, scenario.reservoir_B, theta=args.theta
        )
        u_ab, u_ba = steady_state_gates(
            (n_a, n_b), args.F_A, args.F_B, scenario.reservoir_A, scenario.reservoir_B,
            scenario.u_bar,
        )
    except InfeasibleDemandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"N_A* = {n_a:.3f} veh, N_B* = {n_b:.3f} veh")
    print(f"u_AB* = {u_ab:.3f} veh/h, u_BA* = {u_ba:.3f} veh/h (theta = {args.theta:g})")
    return 0


def _cmd_validate(args) -> int:
    scenario = parse_scenario(args.config)
    print(f"ok: scenario '{scenario.name}' valid "
          f"(L_A={scenario.reservoir_A.L} km, L_B={scenario.reservoir_B.L} km, "
          f"horizon={scenario.sim.horizon_min} min)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perimsim",
        description="Two-reservoir risk-aware perimeter control simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--config", required=True, help="scenario JSON (path or bundled name)")
        if needs_out:
            p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="base seed override")

    p = sub.add_parser("simulate", help="single seeded run with full time series output")
    add_common(p)
    p.add_argument("--policy", default="threshold",
                   choices=["none", "no_control", "threshold", "steady"])
    p.add_argument("--mode", choices=["open_until", "closed_until"], default=None)
    p.add_argument("--trace", action="store_true",
                   help="dump the threshold optimizer's (candidate, cost) trace")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("mc", help="Monte-Carlo batch with aggregate metrics")
    add_common(p)
    p.add_argument("--policy", default="threshold",
                   choices=["none", "no_control", "threshold", "steady"])
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--mode", choices=["open_until", "closed_until"], default=None)
    p.add_argument("--no-baseline", action="store_true",
                   help="skip the paired no-control baseline batch")
    p.set_defaults(func=_cmd_mc)

    p = sub.add_parser("sweep", help="weight/rate matrix and theta frontier")
    add_common(p)
    p.add_argument("--config-high", default=None, help="high accident-rate scenario JSON")
    p.add_argument("--weights", default="0,0.3333,0.6667",
                   help="comma-separated trade-off weights (min per accident)")
    p.add_argument("--thetas", default="", help="comma-separated theta values for the frontier")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("steady-state", help="print steady-state occupancies and gates")
    add_common(p, needs_out=False)
    p.add_argument("--F-A", type=float, required=True, dest="F_A", help="inflow to A (veh/h)")
    p.add_argument("--F-B", type=float, required=True, dest="F_B", help="inflow to B (veh/h)")
    p.add_argument("--theta", type=float, default=0.0)
    p.set_defaults(func=_cmd_steady_state)

    p = sub.add_parser("validate", help="parse and check a scenario file")
    add_common(p, needs_out=False)
    p.set_defaults(func=_cmd_validate)
    return parser


_POLICY_ALIASES = {"none": "no_control", "steady": "steady_state"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "policy"):
        args.policy = _POLICY_ALIASES.get(args.policy, args.policy)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
