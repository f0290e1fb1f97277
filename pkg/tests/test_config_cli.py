import json
import math
from pathlib import Path

import pytest

from multiobs.cli import main
from multiobs.config import load_config, parse_config, serialize_config
from multiobs.errors import ConfigError
from multiobs.runner import oracle_asymptote, run_experiment

SMALL_RUN = """
[model]
kind = "atom-photo"
omega_rabi = 5.0

[channels]
efficiencies = [0.5, 0.1]

[numerics]
dt_damping_units = 0.002
t_final_damping_units = 2.0
sample_stride = 100

[ensemble]
n_traj = 24
seed = 77
threads = 1

[output]
estimators = ["O_1", "O_11"]
"""


class TestParsing:
    def test_small_config(self):
        cfg = parse_config(SMALL_RUN)
        assert cfg.kind == "atom-photo"
        assert cfg.efficiencies == (0.5, 0.1)
        assert cfg.omega_rabi == 5.0
        assert cfg.estimator_labels() == ("O_1", "O_11")

    def test_round_trip(self):
        for text in (SMALL_RUN,):
            cfg = parse_config(text)
            assert parse_config(serialize_config(cfg)) == cfg

    def test_round_trip_homodyne_and_cat(self):
        hom = parse_config(
            """
[model]
kind = "atom-homodyne-diffusive"
omega_rabi = 20.0
[channels]
efficiencies = [0.1, 0.1]
lo_phases_rad = [0.0, 1.5707963267948966]
[numerics]
dt_damping_units = 0.002
t_final_damping_units = 30.0
[ensemble]
n_traj = 8
seed = 3
"""
        )
        assert parse_config(serialize_config(hom)) == hom
        cat = parse_config(
            """
[model]
kind = "qbm-cat"
[channels]
efficiencies = [0.7, 0.3]
[numerics]
dtau_rescaled = 0.005
tau_final_rescaled = 20.0
[ensemble]
n_traj = 100
seed = 5
"""
        )
        assert parse_config(serialize_config(cat)) == cat

    def test_not_toml(self):
        with pytest.raises(ConfigError, match="TOML"):
            parse_config("model kind atom")


class TestValidation:
    def test_zero_trajectories(self):
        with pytest.raises(ConfigError, match="n_traj"):
            parse_config(SMALL_RUN.replace("n_traj = 24", "n_traj = 0"))

    def test_efficiency_budget(self):
        with pytest.raises(ConfigError, match="efficiencies"):
            parse_config(SMALL_RUN.replace("[0.5, 0.1]", "[0.8, 0.4]"))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            parse_config(SMALL_RUN.replace("atom-photo", "atom-foo"))

    def test_missing_omega(self):
        with pytest.raises(ConfigError, match="omega_rabi"):
            parse_config(SMALL_RUN.replace('omega_rabi = 5.0', ""))

    def test_phase_count_mismatch(self):
        with pytest.raises(ConfigError, match="lo_phases_rad"):
            parse_config(
                SMALL_RUN.replace('kind = "atom-photo"', 'kind = "atom-homodyne-diffusive"')
            )

    def test_bad_estimator_label(self):
        with pytest.raises(ConfigError, match="estimators"):
            parse_config(SMALL_RUN.replace('"O_11"', '"O_13"'))

    def test_cat_needs_rescaled_numerics(self):
        with pytest.raises(ConfigError, match="dtau_rescaled"):
            parse_config(
                """
[model]
kind = "qbm-cat"
[channels]
efficiencies = [0.5]
[ensemble]
n_traj = 10
"""
            )


class TestBundledConfigs:
    def test_all_parse(self):
        cfg_dir = Path(__file__).resolve().parents[1] / "src" / "multiobs" / "configs"
        paths = sorted(cfg_dir.glob("fig*.toml"))
        assert len(paths) == 8
        for p in paths:
            load_config(p)

    def test_fig2_parameters(self):
        cfg_dir = Path(__file__).resolve().parents[1] / "src" / "multiobs" / "configs"
        cfg = load_config(cfg_dir / "fig2.toml")
        assert cfg.kind == "atom-photo"
        assert cfg.omega_rabi == 20.0
        assert cfg.efficiencies == (0.5, 0.1)
        assert cfg.initial_state == "maximally-mixed"
        assert cfg.n_traj == 256

    def test_fig8_phases(self):
        cfg_dir = Path(__file__).resolve().parents[1] / "src" / "multiobs" / "configs"
        cfg = load_config(cfg_dir / "fig8.toml")
        assert cfg.lo_phases_rad == (math.pi / 2, math.pi / 2)


class TestRunner:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = parse_config(SMALL_RUN)
        out_a = run_experiment(cfg, tmp_path / "a")
        out_b = run_experiment(cfg, tmp_path / "b")
        assert {p.name for p in out_a.csv_paths} >= {"O_1.csv", "O_11.csv"}
        for pa, pb in zip(sorted(out_a.csv_paths), sorted(out_b.csv_paths)):
            assert pa.read_bytes() == pb.read_bytes()
        manifest = json.loads(out_a.manifest_path.read_text())
        assert manifest["config_hash"] == cfg.config_hash()
        assert manifest["seed"] == 77
        assert "numpy" in manifest["versions"]

    def test_seed_changes_output(self, tmp_path):
        cfg = parse_config(SMALL_RUN)
        out_a = run_experiment(cfg, tmp_path / "a")
        out_b = run_experiment(cfg.with_overrides(seed=78), tmp_path / "b")
        assert (tmp_path / "a" / "O_1.csv").read_bytes() != (tmp_path / "b" / "O_1.csv").read_bytes()

    def test_csv_floats_round_trip(self, tmp_path):
        cfg = parse_config(SMALL_RUN)
        out = run_experiment(cfg, tmp_path)
        body = (tmp_path / "O_1.csv").read_text().splitlines()
        assert body[0] == "time,estimate,standard_error,oracle_value"
        cells = body[1].split(",")
        assert float(cells[0]) == 0.0
        # 17 significant digits reproduce the double exactly
        val = float(body[2].split(",")[1])
        assert f"{val:.17g}" == body[2].split(",")[1]

    def test_waiting_time_csv_for_jump_models(self, tmp_path):
        cfg = parse_config(
            SMALL_RUN.replace("t_final_damping_units = 2.0", "t_final_damping_units = 20.0")
        )
        run_experiment(cfg, tmp_path)
        wt = tmp_path / "waiting_times_channel_1.csv"
        assert wt.exists()
        assert wt.read_text().splitlines()[0] == "bin_center,density,oracle_density"

    def test_oracle_column_value(self, tmp_path):
        cfg = parse_config(SMALL_RUN)
        assert oracle_asymptote(cfg, "O_1") == pytest.approx(0.625)
        run_experiment(cfg, tmp_path)
        last = (tmp_path / "O_1.csv").read_text().splitlines()[-1]
        assert float(last.split(",")[3]) == pytest.approx(0.625)

    def test_cat_outputs(self, tmp_path):
        cfg = parse_config(
            """
[model]
kind = "qbm-cat"
[channels]
efficiencies = [0.7, 0.3]
[numerics]
dtau_rescaled = 0.005
tau_final_rescaled = 2.0
sample_stride = 40
[ensemble]
n_traj = 50
seed = 4
"""
        )
        out = run_experiment(cfg, tmp_path)
        names = {p.name for p in out.csv_paths}
        assert names == {"cat_overlap.csv", "cat_final_imbalance.csv", "cat_trajectory.csv"}


class TestCli:
    def test_run_subcommand(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(SMALL_RUN)
        rc = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert rc == 0
        assert (tmp_path / "out" / "manifest.json").exists()
        assert "O_1.csv" in capsys.readouterr().out

    def test_run_traj_override(self, tmp_path):
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(SMALL_RUN)
        rc = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out"), "--traj", "8"])
        assert rc == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["n_traj"] == 8

    def test_invalid_config_fails_cleanly(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(SMALL_RUN.replace("n_traj = 24", "n_traj = 0"))
        rc = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "n_traj" in capsys.readouterr().err

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MULTIOBS_OUTPUT_DIR", str(tmp_path / "envout"))
        monkeypatch.chdir(tmp_path)
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(SMALL_RUN)
        rc = main(["run", "--config", str(cfg_path)])
        assert rc == 0
        assert (tmp_path / "envout" / "manifest.json").exists()

    def test_verify_lists_scenarios_without_args(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "O1-photo" in out and "waiting-time-independence" in out

    def test_list_scenarios(self, capsys):
        assert main(["list-scenarios"]) == 0
        assert "fokker-planck-independence" in capsys.readouterr().out

    def test_unknown_scenario(self, capsys):
        assert main(["verify", "no-such-scenario"]) == 2
        assert "unknown scenario" in capsys.readouterr().err

    def test_verify_runs_a_scenario(self, capsys):
        assert main(["verify", "replay-determinism"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("PASS replay-determinism")

    def test_bundled_cat_config_via_cli(self, tmp_path):
        cfg = Path(__file__).resolve().parents[1] / "src" / "multiobs" / "configs" / "fig1.toml"
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        trace = (tmp_path / "cat_trajectory.csv").read_text().splitlines()
        assert trace[0] == "tau,A_super,A_1,A_2"
        assert len(trace) > 50

    def test_bundled_fig5_config_via_cli(self, tmp_path):
        cfg = Path(__file__).resolve().parents[1] / "src" / "multiobs" / "configs" / "fig5.toml"
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path), "--traj", "16"]) == 0
        body = (tmp_path / "O_1.csv").read_text().splitlines()
        # oracle overlay column holds the closed-form stationary value
        assert float(body[-1].split(",")[3]) == pytest.approx(0.55)
