import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src import report_io
from src.cli import EXIT_CHECK_FAILED, EXIT_CONFIG_ERROR, EXIT_OK, main, parse_boundary
from src.examples import tanh_profile
from src.pde import FieldBundle, Mesh1D
from src.spec_registry import ConfigError

CONFIGS = Path(__file__).parent.parent / "configs"


def read_report(out, command):
    with open(out / f"{command}_report.json") as f:
        report = json.load(f)
    assert report_io.validate_report(report) == []
    return report


def write_uniform_marginal(path, atoms):
    pd.DataFrame({"atom": atoms, "weight": [1.0] * len(atoms)}).to_csv(path, index=False)
    return str(path)


def test_analyze_orientable_spec(tmp_path):
    assert main(["analyze", "--spec", "ac-quadratic", "--m", "3", "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
    report = read_report(tmp_path, "analyze")
    assert report["passed"]
    assert report["seed"] == 1
    assert report["spec"]["name"] == "ac-quadratic"
    assert report["checks"]["classification"]["verdict"] == "orientable"


def test_analyze_non_orientable_spec_is_still_consistent(tmp_path):
    config = str(CONFIGS / "pairwise_product_m3.conf")
    assert main(["analyze", "--spec-config", config, "--seed", "0", "--out", str(tmp_path)]) == EXIT_OK
    report = read_report(tmp_path, "analyze")
    assert report["checks"]["classification"]["verdict"] == "not_orientable"
    assert report["spec"]["m"] == 3


@pytest.mark.parametrize("argv", [
    ["analyze", "--m", "2"],
    ["analyze", "--spec", "no-such-spec"],
    ["analyze", "--spec", "zero", "--tol-dual", "-1"],
    ["analyze", "--spec", "zero", "--m", "1"],
    ["solve", "--spec", "zero", "--n", "21"],
    ["solve", "--spec", "zero", "--boundary", "0:1"],
    ["frobnicate"],
])
def test_configuration_errors_exit_with_two(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_help_exits_cleanly():
    assert main(["--help"]) == EXIT_OK


def test_parse_boundary():
    assert parse_boundary("0:1,1:0", 2) == [(0.0, 1.0), (1.0, 0.0)]
    with pytest.raises(ConfigError):
        parse_boundary("0:1:2,1:0", 2)
    with pytest.raises(ConfigError):
        parse_boundary("a:b,1:0", 2)


def test_mmot_against_the_oracle(tmp_path):
    mu = write_uniform_marginal(tmp_path / "mu.csv", [2.0, 0.0, 1.0])
    nu = write_uniform_marginal(tmp_path / "nu.csv", [0.0, 1.0, 2.0])
    out = tmp_path / "out"
    config = str(CONFIGS / "negative_bilinear.conf")
    assert main(["mmot", "--spec-config", config, "--marginals", mu, nu, "--seed", "3", "--out", str(out)]) == EXIT_OK
    report = read_report(out, "mmot")
    assert report["checks"]["orientation"]["theta"] == [1, 1]
    assert report["checks"]["oracle"]["oracle_min"] == pytest.approx(-5.0 / 3.0)
    assert report["checks"]["oracle"]["argmin"] == [[0, 1, 2]]
    assert report["checks"]["certificate"]["passed"]
    for name in ("mmot_coupling.csv", "mmot_V1.csv", "mmot_V2.csv"):
        assert (out / name).exists()


def test_mmot_with_the_wrong_orientation_fails(tmp_path):
    mu = write_uniform_marginal(tmp_path / "mu.csv", [0.0, 1.0, 2.0])
    config = str(CONFIGS / "negative_bilinear.conf")
    argv = ["mmot", "--spec-config", config, "--marginals", mu, mu, "--orientation", "1,-1", "--out", str(tmp_path)]
    assert main(argv) == EXIT_CHECK_FAILED
    report = read_report(tmp_path, "mmot")
    assert report["failed_stage"] == "certificate"
    assert report["checks"]["oracle"]["difference"] > 1.0


def test_mmot_input_errors(tmp_path):
    mu = write_uniform_marginal(tmp_path / "mu.csv", [0.0, 1.0])
    missing = str(tmp_path / "missing.csv")
    assert main(["mmot", "--spec", "zero", "--marginals", mu, missing, "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR
    assert main(["mmot", "--spec", "zero", "--marginals", mu, mu, "--orientation", "1,1,1",
                 "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_solve_linear_problems(tmp_path):
    assert main(["solve", "--spec", "zero", "--boundary", "0:0.5,0.5:0", "--L", "1", "--n", "21",
                 "--out", str(tmp_path)]) == EXIT_OK
    report = read_report(tmp_path, "solve")
    assert report["checks"]["solve"]["iterations"] <= 1
    profile = report_io.load_field_csv(str(tmp_path / "solve_profile.csv"))
    np.testing.assert_allclose(profile.values[0], np.linspace(0.0, 0.5, 21), atol=1e-12)

    assert main(["solve", "--spec", "pairwise-product", "--m", "2", "--boundary", "0:1,1:0", "--L", "1",
                 "--n", "41", "--out", str(tmp_path)]) == EXIT_OK
    assert read_report(tmp_path, "solve")["checks"]["solve"]["converged"]


def test_solve_rejects_boundary_outside_the_domain(tmp_path):
    assert main(["solve", "--spec", "zero", "--boundary", "0:2,0:0", "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_decouple_a_field_from_csv(tmp_path):
    mesh = Mesh1D.symmetric(10.0, 401)
    field = FieldBundle.from_functions(mesh, [tanh_profile(), tanh_profile()])
    path = str(tmp_path / "field.csv")
    assert report_io.save_field_csv(field, path)
    out = tmp_path / "out"
    assert main(["decouple", "--spec", "ac-quadratic", "--input", path, "--out", str(out)]) == EXIT_OK
    report = read_report(out, "decouple")
    assert report["checks"]["global_inequality"]["sense"] == "<="
    assert report["checks"]["modica"]["verdict"] is True
    with open(out / "decouple_manifest.json") as f:
        manifest = json.load(f)
    assert manifest["gauge"]["base_node"] == 200
    assert all(manifest["verification"].values())
    assert (out / "decouple_V2.csv").exists()


def test_decouple_a_solve_on_its_monotone_window(tmp_path):
    code = main(["decouple", "--spec", "quadratic-coupling", "--boundary", "0.01:3,3:0.01", "--L", "12", "--n", "401",
                 "--out", str(tmp_path)])
    assert code in (EXIT_OK, EXIT_CHECK_FAILED)
    report = read_report(tmp_path, "decouple")
    window = report["checks"]["window"]
    assert 0 < window["start"] < window["stop"] < 400
    assert report["checks"]["on_solution_identity"]["passed"]
    profile = report_io.load_field_csv(str(tmp_path / "decouple_profile.csv"))
    assert profile.mesh.n == window["stop"] - window["start"] + 1
    assert np.all(np.diff(profile.values[0]) > 0)


def test_decouple_rejects_a_non_monotone_field(tmp_path):
    mesh = Mesh1D(-1.0, 1.0, 21)
    field = FieldBundle.from_functions(mesh, [lambda x: 0.5 * x, lambda x: 0.5 * np.sin(3.0 * x)])
    path = str(tmp_path / "field.csv")
    report_io.save_field_csv(field, path)
    assert main(["decouple", "--spec", "ac-quadratic", "--input", path, "--out", str(tmp_path)]) == EXIT_CHECK_FAILED
    assert read_report(tmp_path, "decouple")["failed_stage"] == "monotone"
    assert main(["decouple", "--spec", "ac-quadratic", "--m", "3", "--input", path,
                 "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_rearrange_generated_field(tmp_path):
    assert main(["rearrange", "--spec", "ac-quadratic", "--seed", "0", "--out", str(tmp_path)]) == EXIT_OK
    report = read_report(tmp_path, "rearrange")
    assert report["checks"]["energy_decrease"]["dirichlet_decrease"] > 0.0
    assert (tmp_path / "rearrange_profile.csv").exists()


def test_examples_command(tmp_path):
    assert main(["examples", "--case", "ac-quadratic", "--n", "201", "--out", str(tmp_path)]) == EXIT_OK
    report = read_report(tmp_path, "examples")
    assert report["case"] == "ac-quadratic"
    assert "common_level_sets" in report["notes"]
    assert (tmp_path / "ac-quadratic_profile.csv").exists()
    assert main(["examples", "--case", "ac-logsumexp", "--signs", "1,-1,1", "--out", str(tmp_path)]) == \
        EXIT_CONFIG_ERROR


def test_examples_command_scales_and_swaps_the_quadratic_coupling(tmp_path):
    assert main(["examples", "--case", "quadratic-coupling", "--n", "401", "--swap", "--out", str(tmp_path)]) == \
        EXIT_OK
    report = read_report(tmp_path, "examples")
    assert report["case"] == "quadratic-coupling"
    assert report["config"]["swap"] is True
    assert report["checks"]["monotone"]["passed"]
    assert main(["examples", "--case", "ac-quadratic", "--scale", "2", "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR
    assert main(["examples", "--case", "quadratic-coupling", "--scale", "0", "--out", str(tmp_path)]) == \
        EXIT_CONFIG_ERROR
