"""Scenario parsing, validation, round-trip, CLI exit codes and outputs."""

import json
import hashlib

import pytest

from perimsim.cli import main
from perimsim.config import (ConfigError, bundled_scenario, parse_scenario,
                             scenario_from_dict, scenario_to_dict)


def _toy_cfg():
    return {
        "name": "cli_toy",
        "reservoirs": {
            "A": {"L": 40.0, "fd": {"shape": "triangular", "v_f": 35.0, "rho_j": 180.0,
                                    "q_max": 1580.0},
                  "alpha": 2e-3, "beta": 0.4, "gamma": 1.2, "eta": 5e-4, "kappa": 0.4,
                  "B_trip": 2.3},
            "B": {"L": 25.0, "fd": {"shape": "triangular", "v_f": 85.0, "rho_j": 140.0,
                                    "q_max": 2350.0},
                  "alpha": 5e-4, "beta": 0.2, "gamma": 1.0, "eta": 3e-4, "kappa": 0.35,
                  "B_trip": 2.7},
        },
        "demand": {
            "profile": [[0.0, 2000.0], [0.3333333333333333, 0.0]],
            "share_A": 0.2,
            "od_shares": {"AA": 1.0, "AB": 0.0, "BA": 1.0, "BB": 0.0},
            "trip_length_km": {"A": {"mean": 2.3, "std": 1.2},
                               "B": {"mean": 2.7, "std": 1.6},
                               "BA": {"mean": 2.8, "std": 1.4}},
        },
        "gates": {"u_max_AB": 20000.0, "u_max_BA": 20000.0},
        "weights": {"c_T": 1.0, "lambda_tradeoff": 0.3333333333333333, "theta": 0.0},
        "sim": {"dt_s": 10.0, "horizon_min": 40.0, "clearance_min": 20.0},
        "controller": {"policy": "threshold", "threshold_mode": "open_until",
                       "trigger": "event", "control_interval_s": 60.0,
                       "prediction_horizon_min": 40.0, "rollout_dt_s": 30.0,
                       "rollout_seed": 0},
        "mc": {"n_runs": 2, "base_seed": 5, "n_workers": 1},
    }


class TestParseScenario:
    def test_bundled_copenhagen_lane_lengths(self):
        sc = bundled_scenario("copenhagen_base")
        assert sc.reservoir_A.L == 328.9
        assert sc.reservoir_B.L == 79.5
        assert sc.demand.share_A == 0.15
        assert sc.demand.total_rate(0.5) == 12000.0
        assert sc.demand.total_rate(1.01) == 0.0

    def test_all_bundled_scenarios_valid(self):
        for name in ("copenhagen_base", "copenhagen_high", "toy_symmetric"):
            sc = bundled_scenario(name)
            assert sc.planned_vehicles() > 0

    def test_missing_field_names_the_path(self, tmp_path):
        cfg = _toy_cfg()
        del cfg["reservoirs"]["A"]["fd"]["rho_j"]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        with pytest.raises(ConfigError, match="rho_j"):
            parse_scenario(path)

    def test_stationarity_violation_names_constraint(self, tmp_path):
        cfg = _toy_cfg()
        cfg["reservoirs"]["A"]["gamma"] = 0.3  # <= beta
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        with pytest.raises(ConfigError, match="gamma"):
            parse_scenario(path)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n "reservoirs": [unquoted]\n}')
        with pytest.raises(ConfigError, match="line 2"):
            parse_scenario(path)

    def test_horizon_must_cover_demand_and_clearance(self):
        cfg = _toy_cfg()
        cfg["sim"]["horizon_min"] = 25.0
        with pytest.raises(ConfigError, match="horizon"):
            scenario_from_dict(cfg)

    def test_round_trip_identical(self, tmp_path):
        path = tmp_path / "toy.json"
        path.write_text(json.dumps(_toy_cfg()))
        sc1 = parse_scenario(path)
        again = scenario_from_dict(scenario_to_dict(sc1), name=sc1.name)
        assert again == sc1

    def test_defaults_applied(self):
        cfg = _toy_cfg()
        del cfg["sim"]["dt_s"]
        sc = scenario_from_dict(cfg)
        assert sc.sim.dt_s == 1.0
        assert sc.demand.forecast_error_bound == 0.0
        assert sc.demand.detour_enabled is False


class TestCli:
    def test_validate_ok(self, capsys):
        assert main(["validate", "--config", "copenhagen_base.json"]) == 0
        assert "valid" in capsys.readouterr().out

    def test_validate_malformed_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["validate", "--config", str(bad)]) == 2

    def test_missing_file_exits_2(self):
        assert main(["validate", "--config", "/nonexistent/file.json"]) == 2

    def test_steady_state_subcommand(self, capsys):
        code = main(["steady-state", "--config", "toy_symmetric.json",
                     "--F-A", "1000", "--F-B", "1000", "--theta", "0.0"])
        assert code == 0
        out = capsys.readouterr().out
        assert "N_A*" in out and "u_AB*" in out

    def test_simulate_writes_bundle(self, tmp_path):
        cfg = tmp_path / "toy.json"
        cfg.write_text(json.dumps(_toy_cfg()))
        out = tmp_path / "out"
        code = main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--seed", "7", "--policy", "none"])
        assert code == 0
        for name in ("series.csv", "events.csv", "runs.csv", "manifest.json"):
            assert (out / name).exists()
        header = (out / "series.csv").read_text().splitlines()[0]
        assert header.startswith("t,N_A,N_B")

    def test_simulate_deterministic_byte_identical(self, tmp_path):
        cfg = tmp_path / "toy.json"
        cfg.write_text(json.dumps(_toy_cfg()))
        digests = []
        for sub in ("o1", "o2"):
            out = tmp_path / sub
            assert main(["simulate", "--config", str(cfg), "--out", str(out),
                         "--seed", "7", "--policy", "threshold"]) == 0
            digests.append(hashlib.sha256((out / "series.csv").read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_mc_outputs_and_manifest_checksums(self, tmp_path):
        cfg = tmp_path / "toy.json"
        cfg.write_text(json.dumps(_toy_cfg()))
        out = tmp_path / "mc"
        code = main(["mc", "--config", str(cfg), "--out", str(out), "--runs", "2",
                     "--policy", "threshold", "--workers", "1"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["files"]
        for name, digest in manifest["files"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
        assert (out / "flow_comparison.csv").exists()
        assert (out / "flow_comparison.svg").exists()

    def test_sweep_emits_tables_and_frontier(self, tmp_path):
        cfg = tmp_path / "toy.json"
        cfg.write_text(json.dumps(_toy_cfg()))
        out = tmp_path / "sweep"
        code = main(["sweep", "--config", str(cfg), "--out", str(out),
                     "--runs", "2", "--weights", "0,0.3333", "--thetas", "0,1",
                     "--workers", "1"])
        assert code == 0
        tables = (out / "tables.md").read_text()
        assert "Travel time" in tables and "Accidents" in tables
        assert "Weight = 0.000" in tables
        assert (out / "frontier.csv").exists()
        assert (out / "frontier.svg").exists()
        assert (out / "flow_comparison_base.csv").exists()

    def test_simulate_trace_dump(self, tmp_path):
        cfg = tmp_path / "toy.json"
        cfg.write_text(json.dumps(_toy_cfg()))
        out = tmp_path / "traced"
        code = main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--seed", "2", "--policy", "threshold", "--trace"])
        assert code == 0
        rows = (out / "optimizer_trace.csv").read_text().splitlines()
        assert rows[0] == "t_star_h,J"
        assert len(rows) > 30

    def test_csv_full_precision(self, tmp_path):
        cfg = tmp_path / "toy.json"
        cfg.write_text(json.dumps(_toy_cfg()))
        out = tmp_path / "prec"
        main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "3",
              "--policy", "none"])
        rows = (out / "runs.csv").read_text().splitlines()
        tt = rows[1].split(",")[2]
        assert len(tt.split(".")[-1]) >= 10  # repr keeps full precision
