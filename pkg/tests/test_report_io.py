import json

import numpy as np
import pandas as pd

from src import report_io
from src.pde import FieldBundle, Mesh1D
from src.rearrange import tilted_box_field


def valid_report(**overrides):
    report = {"command": "analyze", "seed": 7, "passed": True, "failed_stage": None, "checks": {},
              "config": {}, "spec": None, "outputs": []}
    report.update(overrides)
    return report


def test_to_jsonable_converts_numpy_values():
    value = {"a": np.float64(0.5), "b": np.int64(3), "c": np.array([1.0, np.nan]), "d": (np.bool_(True),),
             1: float("inf")}
    assert report_io.to_jsonable(value) == {"a": 0.5, "b": 3, "c": [1.0, None], "d": [True], "1": None}


def test_load_json_failures_return_none(tmp_path):
    assert report_io.load_json(str(tmp_path / "missing.json")) is None
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert report_io.load_json(str(broken)) is None


def test_validate_report():
    assert report_io.validate_report(valid_report()) == []
    problems = report_io.validate_report({"command": "analyze", "seed": "seven", "passed": 1})
    assert "missing key 'failed_stage'" in problems
    assert "missing key 'checks'" in problems
    assert any("'seed'" in p for p in problems)
    assert any("'passed'" in p for p in problems)
    assert report_io.validate_report(valid_report(seed=True)) != []
    assert report_io.validate_report([]) == ["report must be a JSON object"]


def test_save_report(tmp_path):
    path = report_io.save_report(valid_report(checks={"x": {"value": np.float32(1.5)}}), str(tmp_path / "out"),
                                 "analyze_report.json")
    with open(path) as f:
        saved = json.load(f)
    assert saved["checks"]["x"]["value"] == 1.5
    assert report_io.save_report({"command": "analyze"}, str(tmp_path)) is None


def test_marginal_csv(tmp_path):
    path = tmp_path / "mu.csv"
    pd.DataFrame({"atom": [2.0, 0.0, 1.0], "weight": [1.0, 1.0, 2.0]}).to_csv(path, index=False)
    mu = report_io.load_marginal_csv(str(path))
    np.testing.assert_array_equal(mu.atoms, [0.0, 1.0, 2.0])
    np.testing.assert_allclose(mu.weights, [0.25, 0.5, 0.25])

    wrong = tmp_path / "wrong.csv"
    pd.DataFrame({"x": [0.0], "w": [1.0]}).to_csv(wrong, index=False)
    assert report_io.load_marginal_csv(str(wrong)) is None
    repeated = tmp_path / "repeated.csv"
    pd.DataFrame({"atom": [0.0, 0.0], "weight": [1.0, 1.0]}).to_csv(repeated, index=False)
    assert report_io.load_marginal_csv(str(repeated)) is None
    assert report_io.load_marginal_csv(str(tmp_path / "missing.csv")) is None


def test_field_csv_keeps_full_precision(tmp_path):
    mesh = Mesh1D.symmetric(3.0, 31)
    field = FieldBundle.from_functions(mesh, [np.tanh, lambda x: -np.tanh(x / 3.0)])
    path = str(tmp_path / "field.csv")
    assert report_io.save_field_csv(field, path)
    loaded = report_io.load_field_csv(path)
    np.testing.assert_array_equal(loaded.values, field.values)
    assert loaded.mesh == mesh


def test_field_csv_with_wrong_columns(tmp_path):
    path = tmp_path / "field.csv"
    pd.DataFrame({"x": [0.0, 0.5, 1.0], "v1": [0.0, 1.0, 2.0]}).to_csv(path, index=False)
    assert report_io.load_field_csv(str(path)) is None
    uneven = tmp_path / "uneven.csv"
    pd.DataFrame({"x": [0.0, 0.2, 1.0], "u1": [0.0, 1.0, 2.0]}).to_csv(uneven, index=False)
    assert report_io.load_field_csv(str(uneven)) is None


def test_box_field_csv(tmp_path):
    field = tilted_box_field(m=2, seed=0, n_base=5, n_vertical=9)
    path = str(tmp_path / "box.csv")
    assert report_io.save_box_field_csv(field, path)
    loaded = report_io.load_box_field_csv(path)
    np.testing.assert_array_equal(loaded.values, field.values)

    frame = pd.read_csv(path).iloc[::-1]
    frame.to_csv(path, index=False)
    assert report_io.load_box_field_csv(path) is None


def test_save_frames(tmp_path):
    frames = {"a": pd.DataFrame({"p": [0.0]}), "b": pd.DataFrame({"p": [1.0]})}
    paths = report_io.save_frames(frames, str(tmp_path / "tables"), prefix="run_")
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["run_a.csv", "run_b.csv"]
