"""Command line behavior: exit codes, determinism, config validation, outputs."""

import json
import math

import pytest

from eddylab.cli import main

ZERO_FLOW_DOC = {"kappa": 0.5, "eddy": "zero", "gamma": 2.0, "rho": 4.0, "n_scales": 3}


@pytest.fixture(autouse=True)
def _no_out_env(monkeypatch):
    monkeypatch.delenv("EDDYLAB_OUT", raising=False)


def _config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def _load(outdir, name):
    with open(outdir / name, encoding="utf-8") as fh:
        return json.load(fh)


def test_unknown_config_key_names_the_key(tmp_path, capsys):
    cfg = _config(tmp_path, {"tensor": 1.0, "eddy": "shear", "bogus": 1})
    code = main(["homogenize", "--config", cfg, "--out", str(tmp_path)])
    assert code == 1
    assert "unknown key 'bogus'" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    code = main(["homogenize", "--config", str(tmp_path / "absent.json"),
                 "--out", str(tmp_path)])
    assert code == 1
    assert "cannot read config" in capsys.readouterr().err


def test_malformed_config_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    code = main(["homogenize", "--config", str(path), "--out", str(tmp_path)])
    assert code == 1
    assert "not valid JSON" in capsys.readouterr().err


def test_bad_flags_are_user_errors(tmp_path, capsys):
    cfg = _config(tmp_path, {"flow": ZERO_FLOW_DOC})
    assert main([]) == 1
    assert main(["no-such-command", "--config", cfg]) == 1
    assert main(["validate", "--config", cfg, "--threads", "0"]) == 1
    assert main(["validate", "--config", cfg, "--seed", "-1"]) == 1
    capsys.readouterr()


def test_resolution_refusal_exits_2(tmp_path, capsys):
    # disk of radius 2 needs at least 32 cells for the unit-radius scale
    cfg = _config(tmp_path, {"tensor": 1.0,
                             "domain": {"kind": "disk", "size": 2.0}, "n": 16})
    code = main(["exit-pde", "--config", cfg, "--out", str(tmp_path)])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_homogenize_matches_the_shear_expansion(tmp_path):
    cfg = _config(tmp_path, {"tensor": 0.5, "eddy": {"kind": "shear", "n": 128},
                             "n": 128})
    assert main(["homogenize", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path, "homogenize.json")
    s = doc["sigma_sym"]
    lo = min(s["a11"], s["a22"])
    hi = max(s["a11"], s["a22"])
    assert lo == pytest.approx(0.5, rel=1e-6)
    assert hi == pytest.approx(0.5 + 1.0 / (2.0 * 0.5), rel=1e-3)
    assert abs(s["a12"]) < 1e-10
    assert doc["converged"] is True


def test_exit_pde_pure_diffusion_mean(tmp_path):
    cfg = _config(tmp_path, {"tensor": 1.0,
                             "domain": {"kind": "disk", "size": 2.0}, "n": 128})
    assert main(["exit-pde", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path, "exit_pde.json")
    assert doc["mean_exit_time"] == pytest.approx(4.0 / 8.0, rel=4e-2)
    assert doc["min_interior"] > 0.0
    assert (tmp_path / "exit_pde_field.csv").exists()
    assert (tmp_path / "exit_pde_meta.json").exists()


def test_simulate_single_matches_the_diffusion_oracle(tmp_path):
    cfg = _config(tmp_path, {"flow": ZERO_FLOW_DOC, "r": 2.0, "n_particles": 400,
                             "seed": 42, "dt_factor": 0.25})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path, "simulate.json")
    assert abs(doc["mean"] - 1.0) <= 3.0 * doc["stderr"]
    assert doc["seed"] == 42
    assert doc["delta"] == pytest.approx(0.45)
    assert 0.0 <= doc["event_frequency"] <= 1.0
    assert doc["nu_point"] == pytest.approx(2.0 - math.log(doc["mean"]) / math.log(2.0))


def test_simulate_reruns_are_byte_identical(tmp_path):
    cfg = _config(tmp_path, {"flow": ZERO_FLOW_DOC, "r": 2.0, "n_particles": 200,
                             "seed": 7, "dt_factor": 0.25})
    d1, d2 = tmp_path / "run1", tmp_path / "run2"
    assert main(["simulate", "--config", cfg, "--out", str(d1)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(d2)]) == 0
    for name in ("simulate_particles.csv", "simulate.json"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_seed_flag_overrides_the_config(tmp_path):
    cfg = _config(tmp_path, {"flow": ZERO_FLOW_DOC, "r": 2.0, "n_particles": 200,
                             "seed": 7, "dt_factor": 0.25})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path),
                 "--seed", "43"]) == 0
    doc = _load(tmp_path, "simulate.json")
    assert doc["seed"] == 43
    assert doc["config"]["seed"] == 43


def test_simulate_pair_reports_the_l_face(tmp_path):
    cfg = _config(tmp_path, {"flow": ZERO_FLOW_DOC, "r": 2.0, "mode": "pair",
                             "l": 8.0, "n_particles": 200, "seed": 3,
                             "dt_factor": 0.25})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path, "simulate.json")
    assert doc["l"] == 8.0
    assert "l_face_fraction" in doc


def test_format_selects_the_data_files(tmp_path):
    cfg = _config(tmp_path, {"flow": ZERO_FLOW_DOC, "r": 2.0, "n_particles": 100,
                             "seed": 7, "dt_factor": 0.25})
    d_csv, d_json = tmp_path / "csv", tmp_path / "json"
    assert main(["simulate", "--config", cfg, "--out", str(d_csv),
                 "--format", "csv"]) == 0
    assert (d_csv / "simulate_particles.csv").exists()
    assert not (d_csv / "simulate.json").exists()
    assert (d_csv / "simulate_meta.json").exists()
    assert main(["simulate", "--config", cfg, "--out", str(d_json),
                 "--format", "json"]) == 0
    assert (d_json / "simulate.json").exists()
    assert not (d_json / "simulate_particles.csv").exists()


def test_out_env_var_is_honored(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("EDDYLAB_OUT", str(target))
    cfg = _config(tmp_path, {"flow": ZERO_FLOW_DOC})
    assert main(["validate", "--config", cfg]) == 0
    assert (target / "validate.json").exists()


def test_core_gamma_sweep_writes_one_trajectory_per_gamma(tmp_path):
    cfg = _config(tmp_path, {
        "flow": {"kappa": 1.0, "eddy": "zero", "rho": 4.0, "n_scales": 6},
        "n_steps": 5, "n_grid": 32, "gamma_sweep": [2.0, 3.0]})
    assert main(["core", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "core_trajectory_0.csv").exists()
    assert (tmp_path / "core_trajectory_1.csv").exists()
    doc = _load(tmp_path, "core.json")
    runs = doc["runs"]
    assert [r["gamma"] for r in runs] == [2.0, 3.0]
    for run, gamma in zip(runs, (2.0, 3.0)):
        assert run["regime"] == "vanishing_exponential"
        assert run["rate"] == pytest.approx(math.log(1.0 / gamma), abs=1e-12)


def test_core_rejects_short_trajectories(tmp_path, capsys):
    cfg = _config(tmp_path, {
        "flow": {"kappa": 1.0, "eddy": "zero", "gamma": 2.0, "rho": 4.0,
                 "n_scales": 6},
        "n_steps": 3, "n_grid": 32})
    assert main(["core", "--config", cfg, "--out", str(tmp_path)]) == 1
    capsys.readouterr()


def test_validate_reports_compliance_without_failing(tmp_path):
    good = _config(tmp_path, {"flow": {"kappa": 1.0, "eddy": "cellular",
                                       "gamma": 2.0, "rho": 4.0, "n_scales": 3}},
                   name="good.json")
    assert main(["validate", "--config", good, "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path, "validate.json")
    assert doc["compliant"] is True
    assert doc["violations"] == []

    bad = _config(tmp_path, {"flow": {"kappa": 1.0, "eddy": "cellular",
                                      "gamma": 5.0, "rho": 4.0, "n_scales": 3}},
                  name="bad.json")
    assert main(["validate", "--config", bad, "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path, "validate.json")
    assert doc["compliant"] is False
    assert doc["violations"]


def test_two_scale_zero_eddies_are_exactly_reiterated(tmp_path):
    cfg = _config(tmp_path, {"tensor": 0.5, "fine": "zero", "coarse": "zero",
                             "r_list": [2, 4], "n_base": 64})
    assert main(["two-scale", "--config", cfg, "--out", str(tmp_path),
                 "--threads", "2"]) == 0
    doc = _load(tmp_path, "two_scale.json")
    assert [row["R"] for row in doc["rows"]] == [2, 4]
    for row in doc["rows"]:
        assert row["ratio_min"] == pytest.approx(1.0, abs=1e-12)
        assert row["ratio_max"] == pytest.approx(1.0, abs=1e-12)


def test_vcurve_commands_emit_sorted_points(tmp_path):
    cfg = _config(tmp_path, {"eddy": "cellular", "zeta_list": [2.0, 1.0], "n": 64})
    assert main(["vcurve", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path, "vcurve.json")
    pts = doc["points"]
    assert [p["zeta"] for p in pts] == [2.0, 1.0]
    assert all(p["V"] >= 1.0 for p in pts)
    assert all(p["W"] >= p["V"] for p in pts)
    assert doc["monotone_v"] is True


def test_sensitivity_zero_eddies_coincide(tmp_path):
    cfg = _config(tmp_path, {"fine": "zero", "coarse": "zero", "r": 2,
                             "y": [0.5, 0.5], "zeta_list": [0.8, 0.4, 0.2],
                             "n_base": 64})
    assert main(["sensitivity", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path, "sensitivity.json")
    assert doc["slope_base"] == pytest.approx(1.0, abs=1e-10)
    assert doc["slope_shifted"] == pytest.approx(1.0, abs=1e-10)
    for row in doc["rows"]:
        assert row["lambda_base"] == pytest.approx(row["zeta"], rel=1e-12)
        assert row["lambda_shifted"] == pytest.approx(row["zeta"], rel=1e-12)
