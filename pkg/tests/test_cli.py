import json
import math

import numpy as np
import pytest

from blowlab.cli import (
    EXIT_CONFIG,
    EXIT_INCONCLUSIVE,
    EXIT_OK,
    ConfigError,
    ExperimentConfig,
    main,
    make_initial,
    resolve_tau,
)
from blowlab.weights import build_kernel, cfl_tau_max


def write_config(tmp_path, name="config.json", **overrides):
    data = {
        "command": "simulate",
        "kernel": {"family": "laplacian"},
        "h": 0.5,
        "box_radius": 20,
        "p": 2.0,
        "tau": "auto",
        "horizon": 100.0,
    }
    data.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


class TestConfig:
    def test_round_trip_is_lossless(self):
        cfg = ExperimentConfig(command="simulate", kernel={"family": "laplacian"},
                               h=0.5, box_radius=10, p=2.0, tau="auto:0.8",
                               seed=3)
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert json.loads(json.dumps(cfg.to_dict())) == cfg.to_dict()

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            ExperimentConfig.from_dict({
                "command": "simulate", "kernel": "laplacian", "h": 0.5,
                "box_radius": 4, "tua": 0.1})

    def test_unknown_command_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(command="explode", kernel="laplacian",
                             h=0.5, box_radius=4)

    def test_auto_tau_resolves_to_cfl_fraction(self):
        k = build_kernel("laplacian", h=0.5)
        cfg = ExperimentConfig(command="simulate", kernel="laplacian",
                               h=0.5, box_radius=4, tau="auto")
        assert resolve_tau(cfg, k) == pytest.approx(0.9 * cfl_tau_max(k))
        cfg.tau = "auto:0.5"
        assert resolve_tau(cfg, k) == pytest.approx(0.5 * cfl_tau_max(k))
        cfg.tau = 1.0
        with pytest.raises(ConfigError):
            resolve_tau(cfg, k)

    def test_builtin_data(self):
        cfg = ExperimentConfig(command="simulate", kernel="laplacian",
                               h=0.5, box_radius=4,
                               initial={"name": "constant", "value": 2.0})
        field = make_initial(cfg)
        assert field.extension.kind == "constant"
        assert np.all(field.values == 2.0)
        cfg.initial = {"name": "spike", "value": 3.0}
        spike = make_initial(cfg)
        assert spike.values[4] == 3.0
        assert np.sum(spike.values != 0) == 1


class TestSimulateCommand:
    def test_blowup_run_writes_artifacts(self, tmp_path):
        config = write_config(tmp_path, output_dir=str(tmp_path / "out"))
        code = main(["simulate", "--config", str(config)])
        assert code == EXIT_OK
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["report"]["verdict"] == "BlownUp"
        assert report["config"]["p"] == 2.0
        trace = (tmp_path / "out" / "trace.csv").read_text().splitlines()
        assert trace[0] == "j,t,tau_j,sup_norm,l1_norm,eps_j"
        assert len(trace) > 10

    def test_horizon_without_verdict_is_inconclusive(self, tmp_path):
        config = write_config(tmp_path, output_dir=str(tmp_path / "out"),
                              initial={"name": "constant", "value": 1.0},
                              h=1.0, box_radius=4, tau=0.1, horizon=0.3)
        assert main(["simulate", "--config", str(config)]) == EXIT_INCONCLUSIVE

    def test_config_error_exit_code(self, tmp_path):
        config = write_config(tmp_path, p=None)
        assert main(["simulate", "--config", str(config)]) == EXIT_CONFIG
        missing = tmp_path / "nope.json"
        assert main(["simulate", "--config", str(missing)]) == EXIT_CONFIG

    def test_command_mismatch_rejected(self, tmp_path):
        config = write_config(tmp_path)
        assert main(["diffuse", "--config", str(config)]) == EXIT_CONFIG

    def test_determinism_byte_identical(self, tmp_path):
        config = write_config(tmp_path, seed=11)
        main(["simulate", "--config", str(config), "--out",
              str(tmp_path / "a")])
        main(["simulate", "--config", str(config), "--out",
              str(tmp_path / "b")])
        assert (tmp_path / "a" / "trace.csv").read_bytes() == \
            (tmp_path / "b" / "trace.csv").read_bytes()
        assert (tmp_path / "a" / "report.json").read_bytes() == \
            (tmp_path / "b" / "report.json").read_bytes()


class TestOtherCommands:
    def test_diffuse(self, tmp_path):
        config = write_config(tmp_path, command="diffuse", horizon=1.0,
                              output_dir=str(tmp_path / "out"))
        assert main(["diffuse", "--config", str(config)]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["mass_final"] == pytest.approx(report["mass_initial"],
                                                     rel=1e-9)

    def test_symbol_fractional_certifies_bounds(self, tmp_path):
        config = write_config(tmp_path, command="symbol",
                              kernel={"family": "fractional", "s": 0.5},
                              box_radius=10,
                              output_dir=str(tmp_path / "out"))
        assert main(["symbol", "--config", str(config)]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["s1_certified"] and report["s2_certified"]
        rows = (tmp_path / "out" / "symbol.csv").read_text().splitlines()
        assert rows[0] == "xi,m,neg_m_over_xi_2s"

    def test_eigen_flags_degenerate_ground_state(self, tmp_path):
        # axis-skipping masses on the asymmetric interval (-2, 3): the grid
        # splits into two-node components and the ground eigenvalue doubles
        config = write_config(
            tmp_path, command="eigen", h=1.0, box_radius=8, s=1.0,
            kernel={"family": "discrete_delta", "offsets": [2, -2],
                    "masses": [1.0, 1.0]},
            interval=[-2.0, 3.0], output_dir=str(tmp_path / "out"))
        assert main(["eigen", "--config", str(config)]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["simple"] is False
        assert report["rows"][0]["lambda"] == pytest.approx(1.0, abs=1e-10)

    def test_eigen_scaling_rows(self, tmp_path):
        config = write_config(tmp_path, command="eigen", h=0.25, box_radius=8,
                              R_list=[2.0, 4.0], s=1.0,
                              output_dir=str(tmp_path / "out"))
        assert main(["eigen", "--config", str(config)]) == EXIT_OK
        rows = (tmp_path / "out" / "eigen.csv").read_text().splitlines()
        assert rows[0] == "R,lambda,lambda_R2s,residual"
        assert len(rows) == 3
        # eigenfunction exported in the lattice CSV format
        func = (tmp_path / "out" / "eigenfunction.csv").read_text().splitlines()
        assert func[0] == "alpha1,x1,value"

    def test_rates(self, tmp_path):
        config = write_config(tmp_path, command="rates",
                              output_dir=str(tmp_path / "out"))
        assert main(["rates", "--config", str(config)]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        g = report["g_tau"]
        assert report["tail_mean"] == pytest.approx(g, rel=0.02)

    def test_decay_laplacian_slope(self, tmp_path):
        config = write_config(tmp_path, command="decay", horizon=40.0,
                              box_radius=80, s=1.0,
                              output_dir=str(tmp_path / "out"))
        assert main(["decay", "--config", str(config)]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["K"] == pytest.approx(1.0, rel=1e-3)
        assert report["tail_slope"] == pytest.approx(-0.5, abs=0.1)

    def test_sweep_records_dichotomy(self, tmp_path):
        config = write_config(tmp_path, command="sweep",
                              p_list=[2.0, 5.0], horizon=20.0,
                              box_radius=40,
                              output_dir=str(tmp_path / "out"))
        assert main(["sweep", "--config", str(config)]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        verdicts = {row["p"]: row["verdict"] for row in report["rows"]}
        assert verdicts[2.0] == "BlownUp"
        assert verdicts[5.0] == "GlobalSuspected"

    def test_butimes_ode_mode_zero_spread(self, tmp_path):
        # constant data with one shared tau: T(h) has no spatial dependence,
        # every row equals the ODE closed form, zero spread across h
        config = write_config(tmp_path, command="butimes",
                              initial={"name": "constant", "value": 1.0},
                              h_list=[0.5, 0.25], reference_h=0.125,
                              h=0.5, box_radius=4, tau=0.001,
                              output_dir=str(tmp_path / "out"))
        assert main(["butimes", "--config", str(config)]) == EXIT_OK
        lines = (tmp_path / "out" / "butimes.csv").read_text().splitlines()
        rows = [line.split(",") for line in lines[1:]]
        diffs = [float(r[2]) for r in rows]
        assert all(d < 1e-9 for d in diffs)
        from blowlab.odekit import OdeClosedForm, blowup_times
        t_tau, _ = blowup_times(OdeClosedForm(1.0, 2.0, 0.001))
        assert float(rows[0][1]) == pytest.approx(t_tau, rel=1e-6)

    def test_butimes_single_row_slope_undefined(self, tmp_path):
        config = write_config(tmp_path, command="butimes",
                              initial={"name": "constant", "value": 1.0},
                              h_list=[0.5], reference_h=0.25,
                              h=0.5, box_radius=4, tau="auto:0.5",
                              output_dir=str(tmp_path / "out"))
        assert main(["butimes", "--config", str(config)]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["loglog_slope"] is None or math.isnan(report["loglog_slope"])

    def test_butimes_aborts_on_non_blowup_row(self, tmp_path):
        config = write_config(tmp_path, command="butimes", p=5.0,
                              horizon=5.0, h_list=[0.5], reference_h=0.25,
                              output_dir=str(tmp_path / "out"))
        assert main(["butimes", "--config", str(config)]) == EXIT_INCONCLUSIVE

    def test_plot_script_emission(self, tmp_path):
        config = write_config(tmp_path, emit_plot_script=True,
                              output_dir=str(tmp_path / "out"))
        assert main(["simulate", "--config", str(config)]) == EXIT_OK
        script = tmp_path / "out" / "plot_simulate.py"
        assert script.exists()
        assert "trace.csv" in script.read_text()


class TestNumericFailureExit:
    def test_overflow_maps_to_exit_three(self, tmp_path):
        # threshold beyond float range: the run overflows before halting
        config = write_config(tmp_path, h=1.0, box_radius=2, tau=0.1,
                              initial={"name": "constant", "value": 1.0},
                              horizon=1e9, blowup_threshold=1e307,
                              output_dir=str(tmp_path / "out"))
        assert main(["simulate", "--config", str(config)]) == 3
