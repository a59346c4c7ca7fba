import csv
import json

import numpy as np
import pytest

from snaklat import cli, lattice, model
from snaklat.model import PatternId, UBAR, anti_continuum_pattern


def write_config(tmp_path, obj, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


class TestConfigValidation:
    def test_unknown_top_level_key_rejected(self, tmp_path):
        cfg = write_config(tmp_path, {"model": {}, "bogus": 1})
        rc = cli.main(["solve", "--config", cfg, "--out", str(tmp_path)])
        assert rc == 2

    def test_unknown_run_key_rejected(self, tmp_path):
        cfg = write_config(tmp_path, {"run": {"pattern": {"N": 1, "M": 1},
                                              "wrong": True}})
        rc = cli.main(["solve", "--config", cfg, "--out", str(tmp_path)])
        assert rc == 2

    def test_unknown_family_rejected(self, tmp_path):
        cfg = write_config(tmp_path, {"model": {"family": "septic"},
                                      "run": {"pattern": {"N": 1, "M": 1}}})
        rc = cli.main(["solve", "--config", cfg, "--out", str(tmp_path)])
        assert rc == 2

    def test_pattern_exceeding_domain_is_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "grid": {"N_d": 3},
            "run": {"pattern": {"N": 4, "M": 1}, "mu": 0.5, "d": 0.0}})
        rc = cli.main(["solve", "--config", cfg, "--out", str(tmp_path)])
        assert rc == 2
        assert "pattern exceeds domain" in capsys.readouterr().err


class TestSolve:
    def test_decoupled_solve_matches_pattern_exactly(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "grid": {"N_d": 5, "symmetry": "offsite"},
            "run": {"pattern": {"N": 3, "M": 2}, "mu": 0.5, "d": 0.0}})
        rc = cli.main(["solve", "--config", cfg, "--out", str(out)])
        assert rc == 0
        prof = lattice.load_profile(out / "profile.json")
        nl = model.cubic_quintic()
        expect = anti_continuum_pattern(PatternId(3, 2, UBAR, "offsite"),
                                        0.5, nl, n_d=5)
        assert np.array_equal(prof.values, expect.values)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["versions"]["snaklat"]
        assert manifest["seed"] == 0
        assert (out / "profile.csv").exists()

    def test_coupled_solve_meets_tolerance(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "grid": {"N_d": 6},
            "run": {"pattern": {"N": 3, "M": 2}, "mu": 0.5, "d": 1e-3}})
        rc = cli.main(["solve", "--config", cfg, "--out", str(out)])
        assert rc == 0
        log = json.loads((out / "solve_log.json").read_text())
        assert log["residual_inf"] <= 1e-10


class TestSnake:
    def test_small_snake_run(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "grid": {"N_d": 7},
            "run": {"d": 1e-3, "max_folds": 3, "stability": False}})
        rc = cli.main(["snake", "--config", cfg, "--out", str(out)])
        assert rc == 0
        with open(out / "branch.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["index", "mu", "d", "norm", "n_unstable", "event"]
        events = [r[5] for r in rows[1:] if r[5]]
        assert "start" in events[0]
        assert any("fold" in e for e in events)
        folds = json.loads((out / "folds.json").read_text())
        assert len(folds) == 3

    def test_mu_start_outside_window_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path, {"run": {"d": 1e-3, "mu_start": 1.4}})
        rc = cli.main(["snake", "--config", cfg, "--out", str(tmp_path)])
        assert rc == 2


class TestOtherCommands:
    def test_reduced_outputs_all_folds(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {})
        rc = cli.main(["reduced", "--config", cfg, "--out", str(out)])
        assert rc == 0
        data = json.loads((out / "reduced_folds.json").read_text())
        assert data["pitch_interior"]["fold_d"] == pytest.approx(
            1 / (3 * np.sqrt(3)))
        assert data["trans_interior"]["fold_d"] == 0.125

    def test_simulate_writes_trajectory(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "grid": {"N_d": 5},
            "run": {"pattern": {"N": 2, "M": 1}, "mu": 0.5, "d": 1e-3,
                    "t_end": 5.0, "perturbation": 1e-4, "samples": 11},
            "seed": 7})
        rc = cli.main(["simulate", "--config", cfg, "--out", str(out)])
        assert rc == 0
        lines = (out / "trajectory.csv").read_text().strip().splitlines()
        assert lines[0] == "t,deviation"
        assert len(lines) == 12

    def test_verify_asym_fold_ending(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "grid": {"N_d": 7},
            "run": {"ending": "fold_m_near_n", "d_list": [1e-5, 1e-4, 1e-3],
                    "N": 2, "M": 2}})
        rc = cli.main(["verify-asym", "--config", cfg, "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "fit_report.json").read_text())
        assert abs(report["exponent"] - 1.0) < 0.05
        assert abs(report["coefficient"] - 2.0) / 2.0 < 0.1

    @pytest.mark.slow
    def test_asym_command(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "grid": {"N_d": 8},
            "run": {"d": 1e-3, "N": 3, "M": 1, "max_points": 4000}})
        rc = cli.main(["asym", "--config", cfg, "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "asym_summary.json").read_text())
        assert sum(b["seeded"] for b in summary["branches"]) >= 7

    @pytest.mark.slow
    def test_cusp_command(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "grid": {"N_d": 14},
            "run": {"N_range": [4, 5], "d_bracket": [0.05, 0.1]}})
        rc = cli.main(["cusp", "--config", cfg, "--out", str(out)])
        assert rc == 0
        rows = (out / "cusps.csv").read_text().strip().splitlines()
        assert rows[0] == "N,mu_N,d_N,nullity_check,converged"
        assert len(rows) == 3
        fit = json.loads((out / "cusp_fit.json").read_text())
        assert "mu_inf" in fit and "rho" in fit

    def test_isola_negative_control(self, tmp_path):
        # the corner-receded family merges with the primary branch at large
        # coupling: the trace must come back open
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "grid": {"N_d": 12},
            "run": {"d": 0.2, "N": 4, "max_points": 3000}})
        rc = cli.main(["isola", "--config", cfg, "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "isola_summary.json").read_text())
        assert summary["closed"] is False
