import numpy as np
import pytest
from scipy.integrate import quad

from src.pde import FieldBundle, Mesh1D
from src.rearrange import (BoxField, boundary_consistency, energy, equimeasurability_gap, hl_inequality_check, lift,
                           rearranged_energy, rectangular_rearrangement, tilted_box_field, trapezoid_weights,
                           verify_energy_decrease)
from src.spec_registry import ac_quadratic, allen_cahn_potential, pairwise_product, quadratic_form, zero


def unit_profile(functions, n=129):
    return FieldBundle.from_functions(Mesh1D(0.0, 1.0, n), functions)


def test_trapezoid_weights():
    weights = trapezoid_weights([0.0, 0.5, 1.5])
    np.testing.assert_allclose(weights, [0.25, 0.75, 0.5])


def test_box_field_validation():
    z = np.linspace(0.0, 1.0, 5)
    x = np.array([0.0, 1.0])
    good = np.stack([np.vstack([z, z]), np.vstack([1.0 - z, 1.0 - z])])
    assert BoxField((x,), good).boundary == ((0.0, 1.0), (1.0, 0.0))

    flat = good.copy()
    flat[1] = 0.5
    with pytest.raises(ValueError, match="degenerate vertical range"):
        BoxField((x,), flat)

    tilted_face = good.copy()
    tilted_face[0, 1, 0] = 0.1
    with pytest.raises(ValueError, match="bottom boundary"):
        BoxField((x,), tilted_face)

    bump = good.copy()
    bump[0, :, 2] = 0.9
    with pytest.raises(ValueError, match="strictly monotone"):
        BoxField((x,), bump)

    with pytest.raises(ValueError):
        BoxField((np.array([1.0, 0.0]),), good)


def test_weights_integrate_to_the_box_volume():
    x = np.linspace(0.0, 2.0, 5)
    y = np.linspace(0.0, 0.5, 3)
    profile = unit_profile([lambda z: z, lambda z: -z], n=9)
    field = lift(profile, (x, y))
    assert field.values.shape == (2, 5, 3, 9)
    assert field.weights().sum() == pytest.approx(1.0)
    assert field.base_volume == pytest.approx(1.0)
    assert field.is_one_dimensional()


def test_rearrangement_of_a_one_dimensional_field_is_exact():
    profile = unit_profile([lambda z: np.tanh(4.0 * (z - 0.4)), lambda z: -np.tanh(3.0 * (z - 0.6))])
    field = lift(profile, (np.linspace(0.0, 1.0, 7),))
    rearranged = rectangular_rearrangement(field)
    np.testing.assert_array_equal(rearranged.values, profile.values)
    assert equimeasurability_gap(field, rearranged) <= 1e-12

    report = verify_energy_decrease(field, pairwise_product(2, coefficient=1.0, box=[(-1.0, 1.0)] * 2))
    assert report["one_dimensional"]
    assert report["consistency"]["consistent"]
    assert abs(report["dirichlet_decrease"]) <= 1e-10
    assert abs(report["potential_decrease"]) <= 1e-10
    assert report["passed"]
    assert report["certificate"]["pass"]


def test_energy_of_linear_fields():
    profile = unit_profile([lambda z: z, lambda z: 2.0 * z])
    result = energy(profile, zero(2))
    assert result.dirichlet == pytest.approx(2.5, rel=1e-12)
    assert result.potential == 0.0
    assert result.total == pytest.approx(2.5, rel=1e-12)


def test_energy_matches_quadrature_for_a_tanh_profile():
    L = 5.0
    scale = 2.0 * L / np.sqrt(2.0)

    def u(z):
        return np.tanh(scale * (z - 0.5))

    def du(z):
        return scale / np.cosh(scale * (z - 0.5)) ** 2

    profile = unit_profile([u, u], n=2001)
    result = energy(profile, ac_quadratic(2))
    dirichlet, _ = quad(lambda z: du(z) ** 2, 0.0, 1.0, points=[0.5], limit=200)
    potential, _ = quad(lambda z: 2.0 * allen_cahn_potential(u(z)), 0.0, 1.0, points=[0.5], limit=200)
    assert result.dirichlet == pytest.approx(dirichlet, rel=1e-4)
    assert result.potential == pytest.approx(potential, rel=1e-4)


@pytest.mark.parametrize("seed", range(20))
def test_rearrangement_does_not_increase_the_energy(seed):
    field = tilted_box_field(m=2, seed=seed)
    report = verify_energy_decrease(field, ac_quadratic(2), certify_coupling=False)
    assert not report["one_dimensional"]
    assert report["consistency"]["consistent"]
    assert report["dirichlet_decrease"] > 0.0
    assert report["potential_decrease"] >= -1e-10
    assert report["passed"]
    assert report["equimeasurability_gap"] <= 1.0 / (field.n_vertical - 1) + 1e-12


def test_rearranged_coupling_is_certified():
    field = tilted_box_field(m=3, seed=4, n_base=32, n_vertical=64)
    report = verify_energy_decrease(field, ac_quadratic(3))
    assert report["passed"]
    assert report["certificate"]["pass"]


def test_decreasing_components_follow_their_boundary_data():
    field = tilted_box_field(m=2, seed=2, signs=[1, -1])
    profile, after, coupling = rearranged_energy(field, ac_quadratic(2))
    assert profile.values[0, 0] < profile.values[0, -1]
    assert profile.values[1, 0] > profile.values[1, -1]
    assert coupling.orientation.theta == (1, -1)
    assert after.total == pytest.approx(after.dirichlet + after.potential)


def test_inconsistent_boundary_data_report_the_potential_term_only():
    field = tilted_box_field(m=2, seed=3, signs=[1, -1])
    consistency = boundary_consistency(field, ac_quadratic(2))
    assert not consistency["consistent"]
    assert consistency["pair"] == [1, 2]
    report = verify_energy_decrease(field, ac_quadratic(2))
    assert "certificate" not in report
    assert report["passed"] == (report["dirichlet_decrease"] >= -report["tolerance"])


@pytest.mark.parametrize("seed", range(100))
def test_hardy_littlewood_for_submodular_costs(seed):
    rng = np.random.default_rng(seed)
    m = 2 + seed % 2
    vectors = rng.uniform(-1.0, 1.0, size=(m, 12))
    result = hl_inequality_check(vectors, quadratic_form(m, seed=seed))
    assert result["submodular"]
    assert result["passed"]
    assert result["gap"] <= 1e-12


def test_hardy_littlewood_fails_for_a_supermodular_cost():
    vectors = np.array([[0.0, 1.0], [1.0, 0.0]])
    spec = pairwise_product(2, coefficient=1.0)
    with pytest.raises(ValueError, match="not submodular"):
        hl_inequality_check(vectors, spec)
    result = hl_inequality_check(vectors, spec, require_submodular=False)
    assert not result["passed"]
    assert result["gap"] == pytest.approx(1.0)
