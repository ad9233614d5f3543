import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.spec_registry import (ConfigError, ac_logsumexp, ac_quadratic, allen_cahn_derivative, allen_cahn_potential,
                               build_spec, load_spec_config, parse_spec_config, spec_from_settings)

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def test_allen_cahn_potential_values():
    np.testing.assert_allclose(allen_cahn_potential([-1.0, 0.0, 1.0]), [0.0, 0.25, 0.0])
    np.testing.assert_allclose(allen_cahn_derivative([-1.0, 0.0, 0.5]), [0.0, 0.0, -0.375])


def test_ac_quadratic_on_the_diagonal():
    spec = ac_quadratic(4)
    t = np.linspace(-0.9, 0.9, 7)
    points = np.repeat(t[:, None], 4, axis=1)
    np.testing.assert_allclose(spec.H(points), 4 * allen_cahn_potential(t))
    np.testing.assert_allclose(spec.grad(points), np.repeat(allen_cahn_derivative(t)[:, None], 4, axis=1))
    np.testing.assert_allclose(spec.hess(points)[:, 0, 1], -2.0)


def test_ac_quadratic_counts_each_pair_once():
    spec = ac_quadratic(3)
    p = np.array([1.0, 0.0, 0.0])
    assert spec.H(p) == pytest.approx(2.0 + 0.0 + 0.25 * 2)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-1.0, 1.0)))
def test_logsumexp_dominates_the_sum_of_potentials(p):
    spec = ac_logsumexp(3)
    assert np.sum(allen_cahn_potential(p)) <= spec.H(p) + 1e-12


def test_build_spec_errors():
    with pytest.raises(ConfigError, match="Unknown spec"):
        build_spec("nope")
    with pytest.raises(ConfigError, match="exactly two"):
        build_spec("quadratic-coupling", m=3)
    with pytest.raises(ConfigError):
        build_spec("ac-quadratic", m=2, coefficient=1.0)
    with pytest.raises(ConfigError):
        build_spec("pairwise-product", m=2, box=[(0.0, 1.0), (2.0, 1.0)])


def test_parse_spec_config():
    text = "# comment\nname = pairwise-product  # trailing\n\nm = 2\ncoefficient = -1\n"
    assert parse_spec_config(text) == {"name": "pairwise-product", "m": "2", "coefficient": "-1"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_spec_config("m = 2\nm = 3\n")
    with pytest.raises(ConfigError, match=":1:"):
        parse_spec_config("name pairwise-product\n")


def test_spec_from_settings():
    spec = spec_from_settings({"name": "pairwise-product", "m": "2", "coefficient": "-1",
                               "box_1_min": "0", "box_1_max": "2", "box_2_min": "0", "box_2_max": "2"})
    assert spec.params["coefficient"] == -1.0
    np.testing.assert_allclose(spec.domain, [[0.0, 2.0], [0.0, 2.0]])
    with pytest.raises(ConfigError, match="missing"):
        spec_from_settings({"name": "zero", "m": "2", "box_1_min": "0"})
    with pytest.raises(ConfigError, match="unknown keys"):
        spec_from_settings({"name": "zero", "colour": "red"})
    with pytest.raises(ConfigError, match="name"):
        spec_from_settings({"m": "2"})


def test_load_spec_config(tmp_path):
    path = tmp_path / "spec.conf"
    path.write_text("name = quadratic-form\nm = 3\nseed = 7\n")
    spec = load_spec_config(str(path))
    assert spec.name == "quadratic-form"
    assert spec.params == {"m": 3, "seed": 7}
    with pytest.raises(ConfigError, match="not found"):
        load_spec_config(str(tmp_path / "missing.conf"))


@pytest.mark.parametrize("name,m", [("ac_quadratic_m3.conf", 3), ("pairwise_product_m3.conf", 3),
                                    ("negative_bilinear.conf", 2), ("quadratic_coupling.conf", 2)])
def test_shipped_configs_load(name, m):
    spec = load_spec_config(os.path.join(CONFIG_DIR, name))
    assert spec.m == m
