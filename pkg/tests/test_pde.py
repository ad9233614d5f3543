import numpy as np
import pytest

from src.examples import tanh_profile
from src.nonlinearity import Orientation
from src.pde import (TAIL_FLOOR, TAIL_WINDOW, FieldBundle, Mesh1D, _block_thomas, check_H_monotone, check_monotone,
                     monotone_window, orientation_from_field, solve_scalar_bvp, solve_system_bvp, system_residual)
from src.spec_registry import ac_quadratic, allen_cahn_derivative, allen_cahn_second_derivative, quadratic_coupling, zero


def tanh_field(mesh, signs):
    return FieldBundle.from_functions(mesh, [tanh_profile(s) for s in signs])


def test_mesh_validation():
    mesh = Mesh1D.symmetric(10.0, 401)
    assert mesh.h == pytest.approx(0.05)
    assert mesh.nodes[mesh.midpoint_index] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        Mesh1D(0.0, 1.0, 2)
    with pytest.raises(ValueError):
        Mesh1D(1.0, 0.0, 10)


def test_field_boundary_must_match_the_end_values():
    mesh = Mesh1D(0.0, 1.0, 5)
    values = np.vstack([np.linspace(0.0, 1.0, 5), np.linspace(1.0, 0.0, 5)])
    assert FieldBundle(mesh, values).boundary == ((0.0, 1.0), (1.0, 0.0))
    with pytest.raises(ValueError, match="differ"):
        FieldBundle(mesh, values, boundary=[(0.0, 1.0), (1.0, 0.5)])
    with pytest.raises(ValueError):
        FieldBundle(mesh, values[:, :4])


def test_laplace_system_is_solved_without_iterating():
    mesh = Mesh1D(-1.0, 1.0, 101)
    field, report = solve_system_bvp(zero(2), mesh, [(-0.5, 0.5), (0.25, -0.75)])
    assert report.converged
    assert report.iterations <= 1
    np.testing.assert_allclose(field.values[1], np.linspace(0.25, -0.75, 101), atol=1e-12)


def test_linear_system_takes_one_newton_step():
    mesh = Mesh1D(-1.0, 1.0, 101)
    guess = FieldBundle(mesh, np.vstack([np.linspace(-0.5, 0.5, 101) + 0.3 * (1.0 - mesh.nodes ** 2),
                                         np.linspace(0.25, -0.75, 101)]))
    field, report = solve_system_bvp(zero(2), mesh, guess.boundary, initial_guess=guess)
    assert report.converged
    assert report.iterations == 1
    assert report.damping_history == [1.0]
    assert report.tail_constant == 0.0
    np.testing.assert_allclose(field.values[0], np.linspace(-0.5, 0.5, 101), atol=1e-10)


def solve_diagonal(n, L=10.0):
    mesh = Mesh1D.symmetric(L, n)
    exact = tanh_field(mesh, (1, 1))
    field, report = solve_system_bvp(ac_quadratic(2), mesh, exact.boundary, initial_guess=exact)
    assert report.converged
    return field, exact


def test_allen_cahn_system_converges_at_second_order():
    errors = []
    for n in (101, 201, 401):
        field, exact = solve_diagonal(n)
        errors.append(float(np.max(np.abs(field.values - exact.values))))
    ratios = [errors[0] / errors[1], errors[1] / errors[2]]
    assert all(3.5 <= r <= 4.5 for r in ratios), ratios


def test_allen_cahn_solution_is_odd_and_diagonal():
    field, _ = solve_diagonal(201)
    # the kink translation mode is nearly singular; a 1e-10 residual leaves about 1e-6 of drift
    np.testing.assert_allclose(field.values[:, ::-1], -field.values, atol=1e-6)
    np.testing.assert_allclose(field.values[0], field.values[1], atol=1e-12)
    assert np.max(np.abs(system_residual(ac_quadratic(2), field))) <= 1e-10


def perturbed_kink(mesh, amplitude=0.05):
    """Odd initial guess near the tanh kink with the exact boundary values."""
    exact = tanh_profile()(mesh.nodes)
    guess = exact - amplitude * np.sin(np.pi * mesh.nodes / mesh.x_hi)
    guess[0], guess[-1] = exact[0], exact[-1]
    return exact, guess


def test_coupled_and_scalar_solves_agree_on_the_diagonal():
    mesh = Mesh1D.symmetric(10.0, 201)
    field, _ = solve_diagonal(201)
    _, guess = perturbed_kink(mesh)
    scalar, report = solve_scalar_bvp(allen_cahn_derivative, mesh, field.boundary[0], initial_guess=guess,
                                      potential_second_derivative=allen_cahn_second_derivative)
    assert report.converged
    np.testing.assert_allclose(scalar, field.values[0], atol=1e-5)


def test_scalar_solver_without_second_derivative():
    mesh = Mesh1D.symmetric(10.0, 401)
    exact, guess = perturbed_kink(mesh)
    values, report = solve_scalar_bvp(allen_cahn_derivative, mesh, (exact[0], exact[-1]), initial_guess=guess)
    assert report.converged
    assert report.iterations >= 2
    assert np.max(np.abs(values - exact)) < 1e-3


def test_tail_constant_bounds_the_final_newton_steps():
    mesh = Mesh1D.symmetric(10.0, 201)
    exact, guess = perturbed_kink(mesh, amplitude=0.2)
    _, report = solve_scalar_bvp(allen_cahn_derivative, mesh, (exact[0], exact[-1]), initial_guess=guess,
                                 potential_second_derivative=allen_cahn_second_derivative)
    assert report.converged
    assert np.isfinite(report.tail_constant) and report.tail_constant >= 0.0
    history = report.residual_history
    for r0, r1 in zip(history[:-1], history[1:]):
        if 0.0 < r0 < TAIL_WINDOW and r1 > TAIL_FLOOR:
            assert r1 <= report.tail_constant * r0 ** 2 * (1.0 + 1e-12)
    assert report.to_dict()["tail_constant"] == report.tail_constant


def test_iteration_cap_reports_no_convergence():
    mesh = Mesh1D.symmetric(10.0, 201)
    exact, guess = perturbed_kink(mesh)
    _, report = solve_scalar_bvp(allen_cahn_derivative, mesh, (exact[0], exact[-1]), initial_guess=guess,
                                 max_iterations=1)
    assert not report.converged
    assert report.iterations == 1
    assert np.isfinite(report.final_residual_norm)
    assert len(report.residual_history) == 2


def test_boundary_outside_the_domain_is_rejected():
    with pytest.raises(ValueError, match="outside the domain"):
        solve_system_bvp(ac_quadratic(2), Mesh1D(0.0, 1.0, 11), [(-2.0, 1.0), (0.0, 0.5)])
    with pytest.raises(ValueError, match="boundary pairs"):
        solve_system_bvp(ac_quadratic(2), Mesh1D(0.0, 1.0, 11), [(0.0, 1.0)])


def test_block_thomas_matches_a_dense_solve():
    rng = np.random.default_rng(5)
    K, m, off = 7, 3, 0.5
    diagonal = rng.normal(size=(K, m, m)) + 4.0 * np.eye(m)
    rhs = rng.normal(size=(K, m))
    dense = np.zeros((K * m, K * m))
    for k in range(K):
        dense[k * m:(k + 1) * m, k * m:(k + 1) * m] = diagonal[k]
        if k + 1 < K:
            dense[k * m:(k + 1) * m, (k + 1) * m:(k + 2) * m] = off * np.eye(m)
            dense[(k + 1) * m:(k + 2) * m, k * m:(k + 1) * m] = off * np.eye(m)
    expected = np.linalg.solve(dense, rhs.ravel()).reshape(K, m)
    np.testing.assert_allclose(_block_thomas(diagonal, off, rhs), expected, atol=1e-12)


def test_monotonicity_verdicts():
    mesh = Mesh1D(0.0, 1.0, 5)
    field = FieldBundle(mesh, [[0.0, 1.0, 2.0, 1.5, 3.0], [3.0, 2.0, 1.0, 0.5, 0.0], [0.0, 0.0, 1.0, 2.0, 2.0],
                               [1.0, 2.0, 0.0, 2.0, 1.0]])
    verdicts = check_monotone(field)
    assert [v.direction for v in verdicts] == ["non-monotone", "decreasing", "increasing", "non-monotone"]
    assert verdicts[0].witness == 2
    assert verdicts[3].witness == 0
    assert [v.component for v in verdicts] == [1, 2, 3, 4]


def test_monotone_window_drops_boundary_layers():
    mesh = Mesh1D(0.0, 6.0, 7)
    # u_1 dips before rising, u_2 overshoots below its end value
    field = FieldBundle(mesh, [[0.5, 0.2, 0.1, 0.3, 0.6, 0.9, 1.0], [2.0, 1.8, 1.5, 1.1, 0.8, 0.4, 0.6]])
    assert monotone_window(field) == (2, 5)
    window = field.restrict(2, 5)
    np.testing.assert_allclose(window.mesh.nodes, [2.0, 3.0, 4.0, 5.0])
    assert window.boundary == ((0.1, 0.9), (1.5, 0.4))
    assert [v.direction for v in check_monotone(window)] == ["increasing", "decreasing"]


def test_monotone_window_of_monotone_and_flat_components():
    mesh = Mesh1D(0.0, 1.0, 5)
    field = FieldBundle(mesh, [[0.0, 1.0, 2.0, 3.0, 4.0], [1.0, 0.0, 3.0, 0.0, 1.0]])
    assert monotone_window(field) == (0, 4)
    with pytest.raises(ValueError, match="monotone window"):
        monotone_window(FieldBundle(mesh, [[0.0, 2.0, 1.0, 0.5, 1.0], [1.0, 0.0, 0.5, 1.5, 1.0]]))


def test_h_monotone_verdicts():
    mesh = Mesh1D.symmetric(5.0, 51)
    assert check_H_monotone(tanh_field(mesh, (1, 1)), ac_quadratic(2)).verdict == "H-monotone"
    anti = check_H_monotone(tanh_field(mesh, (1, -1)), ac_quadratic(2))
    assert anti.verdict == "anti-monotone"
    assert anti.witness_node == 1
    assert anti.witness_pair == (1, 2)

    violated = check_H_monotone(tanh_field(mesh, (1, 1, -1)), ac_quadratic(3))
    assert violated.verdict == "violated"
    assert violated.witness_pair == (1, 3)
    assert violated.violating_nodes == 49


def test_h_monotone_for_opposite_profiles_of_the_quadratic_coupling():
    mesh = Mesh1D(-1.0, 1.0, 21)
    field = FieldBundle.from_functions(mesh, [lambda x: np.exp(x), lambda x: np.exp(-x)])
    assert check_H_monotone(field, quadratic_coupling()).h_monotone


def test_h_monotone_requires_monotone_components():
    mesh = Mesh1D(-1.0, 1.0, 21)
    field = FieldBundle.from_functions(mesh, [lambda x: x, lambda x: x ** 2])
    with pytest.raises(ValueError, match="not monotone"):
        check_H_monotone(field, ac_quadratic(2))


def test_orientation_from_field():
    mesh = Mesh1D.symmetric(5.0, 51)
    assert orientation_from_field(tanh_field(mesh, (1, 1, -1))) == Orientation((1, 1, -1))
    assert orientation_from_field(tanh_field(mesh, (-1, 1))) == Orientation((1, -1))
