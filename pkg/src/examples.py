"""
Worked Examples

This module provides end-to-end runs of the three worked systems:

    ac-quadratic        Allen-Cahn potentials with a quadratic interaction; the
                        diagonal tanh profile solves the coupled system
    ac-logsumexp        log-sum-exp mean of Allen-Cahn potentials; +-tanh profiles
    quadratic-coupling  u_1'' = u_1 u_2^2, u_2'' = u_1^2 u_2 with u_1 increasing
                        and u_2 decreasing

Each run wires classification, the BVP solver, the decoupling construction and
the transport certificate together. Checks are recorded in order and a run
stops at the first failing stage.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.integrate import simpson

from src.decouple import (build_decoupling, modica_check, verify_decoupled_pde, verify_global_inequality,
                          verify_on_solution_identity)
from src.mmot1d import product_axes, verify_pushforward_optimality
from src.nonlinearity import ConsistencyError, NonlinearitySpec, make_grid, verify_equivalence
from src.pde import (FieldBundle, Mesh1D, check_H_monotone, check_monotone, monotone_window, orientation_from_field,
                     solve_scalar_bvp, solve_system_bvp, system_residual)
from src.spec_registry import ac_logsumexp, ac_quadratic, allen_cahn_derivative, allen_cahn_potential, quadratic_coupling

EPS_CONJ = 1e-3
EXACT_TOL = 1e-8
EXPLICIT_TOL = 1e-6
CONCAVITY_TOL = 1e-10
SATURATION_TOL = 1e-6
DECOUPLED_SOLVE_TOL = 1e-4
RESIDUAL_CONSTANT = 0.16
WINDOW = (0.05, 0.95)
CASES = ("ac-quadratic", "ac-logsumexp", "quadratic-coupling")


@dataclass
class ExampleCase:
    """A worked system with its known facts."""

    name: str
    spec: NonlinearitySpec
    exact: Optional[List[Callable]] = None
    exact_derivatives: Optional[List[Callable]] = None
    expected_orientation: Optional[tuple] = None
    facts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in CASES:
            raise ValueError(f"Unknown example '{self.name}'. Available: {', '.join(CASES)}")


def tanh_profile(sign: float = 1.0):
    return lambda x: sign * np.tanh(x / np.sqrt(2.0))


def tanh_profile_derivative(sign: float = 1.0):
    return lambda x: sign / np.sqrt(2.0) / np.cosh(x / np.sqrt(2.0)) ** 2


@dataclass
class CheckLog:
    """Ordered check results; the first failure names the failed stage."""

    checks: Dict[str, dict] = field(default_factory=dict)
    notes: Dict[str, dict] = field(default_factory=dict)
    failed_stage: Optional[str] = None

    def record(self, stage: str, passed, /, **values) -> bool:
        """Store a stage; a 'passed' entry in values is replaced by the stage verdict."""
        passed = bool(passed)
        values.pop("passed", None)
        self.checks[stage] = dict(values, passed=passed)
        if not passed and self.failed_stage is None:
            self.failed_stage = stage
            logging.warning(f"Stage '{stage}' failed: {values}")
        else:
            logging.info(f"Stage '{stage}': {'pass' if passed else 'fail'}")
        return passed

    def note(self, name: str, **values):
        self.notes[name] = values

    @property
    def passed(self) -> bool:
        return self.failed_stage is None and bool(self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "failed_stage": self.failed_stage, "checks": self.checks, "notes": self.notes}


@dataclass
class ExampleRun:
    case: ExampleCase
    log: CheckLog
    solution: Optional[FieldBundle] = None
    window: Optional[FieldBundle] = None
    frames: Dict[str, pd.DataFrame] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.log.passed

    def to_dict(self) -> dict:
        return dict({"case": self.case.name, "spec": self.case.spec.name, "params": self.case.spec.params},
                    **self.log.to_dict())


def common_level_set_discrepancy(field_bundle: FieldBundle) -> float:
    """
    Largest monotonicity violation of u_j listed in the order of u_i, over
    all pairs; zero when every u_j is a monotone function of every u_i.
    """
    worst = 0.0
    values = field_bundle.values
    for i in range(field_bundle.m):
        order = np.argsort(values[i], kind="stable")
        for j in range(field_bundle.m):
            if j == i:
                continue
            along = values[j][order]
            direction = np.sign(along[-1] - along[0]) or 1.0
            steps = direction * np.diff(along)
            worst = max(worst, float(max(0.0, -steps.min())))
    return worst


def _classify(log: CheckLog, spec: NonlinearitySpec, expected: tuple, domain=None) -> bool:
    grid = make_grid(spec.domain if domain is None else domain)
    try:
        report = verify_equivalence(spec, grid)
    except ConsistencyError as e:
        return log.record("orientable", False, error=str(e))
    theta = report.orientable.theta
    found = None if theta is None else list(theta.theta)
    return log.record("orientable", report.verdict == "orientable" and found == list(expected),
                      verdict=report.verdict, theta=found, expected=list(expected), consistent=report.consistent)


def _residual_stage(log: CheckLog, spec: NonlinearitySpec, field_bundle: FieldBundle) -> bool:
    residual = float(np.max(np.abs(system_residual(spec, field_bundle))))
    bound = RESIDUAL_CONSTANT * field_bundle.mesh.h ** 2
    return log.record("residual", residual <= bound, max_residual=residual, bound=bound)


def _allen_cahn_potentials_stage(log: CheckLog, potentials) -> bool:
    derivative_gap, value_spread = 0.0, 0.0
    for i in range(potentials.m):
        table = potentials.table(i)
        p = table["p"].to_numpy()
        derivative_gap = max(derivative_gap, float(np.max(np.abs(table["Vprime"].to_numpy() - allen_cahn_derivative(p)))))
        value_spread = max(value_spread, float(np.ptp(table["V"].to_numpy() - allen_cahn_potential(p))))
    return log.record("decoupling", derivative_gap <= EXACT_TOL and value_spread <= EXACT_TOL,
                      derivative_gap=derivative_gap, gauge_aligned_value_gap=value_spread)


def run_ac_quadratic(m: int = 2, mesh: Optional[Mesh1D] = None, L: float = 10.0, n: int = 401,
                     flip: Optional[int] = None, resolution: int = 33) -> ExampleRun:
    """
    Allen-Cahn system with quadratic interaction on the exact diagonal profile.

    Args:
        m : number of components (>= 2)
        mesh : mesh; defaults to [-L, L] with n nodes
        flip : optional 1-based component replaced by -tanh (breaks H-monotonicity)
        resolution : per-axis resolution of the range-product grids

    Returns:
        ExampleRun with checks orientable, h_monotone, residual, decoupling,
        on_solution_identity, global_inequality, decoupled_pde, modica, pushforward
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    mesh = mesh or Mesh1D.symmetric(L, n)
    signs = np.ones(m)
    if flip is not None:
        signs[flip - 1] = -1.0
    spec = ac_quadratic(m)
    case = ExampleCase("ac-quadratic", spec, [tanh_profile(s) for s in signs],
                       [tanh_profile_derivative(s) for s in signs], (1,) * m, {"V_i": "W up to gauge"})
    log = CheckLog()
    run = ExampleRun(case, log)

    if not _classify(log, spec, case.expected_orientation):
        return run
    field_bundle = FieldBundle.from_functions(mesh, case.exact)
    run.solution = field_bundle
    run.frames["profile"] = field_bundle.to_frame()

    verdict = check_H_monotone(field_bundle, spec)
    if not log.record("h_monotone", verdict.h_monotone, **verdict.to_dict()):
        return run
    if not _residual_stage(log, spec, field_bundle):
        return run

    potentials = build_decoupling(field_bundle, spec)
    run.frames.update(potentials.frames())
    if not _allen_cahn_potentials_stage(log, potentials):
        return run

    identity = verify_on_solution_identity(field_bundle, potentials, spec)
    if not log.record("on_solution_identity", identity["max_gap"] <= EXACT_TOL, **identity):
        return run
    inequality = verify_global_inequality(field_bundle, potentials, spec, resolution)
    if not log.record("global_inequality", inequality["max_violation"] <= EXACT_TOL, **inequality):
        return run
    decoupled = verify_decoupled_pde(field_bundle, potentials)
    if not log.record("decoupled_pde", decoupled["passed"], **decoupled):
        return run

    gradients = np.vstack([f(mesh.nodes) for f in case.exact_derivatives])
    modica = modica_check(field_bundle, potentials, spec, gradients=gradients, resolution=resolution)
    run.frames["modica"] = modica.to_frame(mesh.nodes)
    equality_gap = float(np.max(np.abs(modica.lhs - spec.H(field_bundle.points))))
    if not log.record("modica", bool(modica.passed) and equality_gap <= EXACT_TOL,
                      equality_gap=equality_gap, **modica.to_dict()):
        return run

    bridge = verify_pushforward_optimality(field_bundle, spec, orientation_from_field(field_bundle), resolution)
    if not log.record("pushforward", bridge["passed"], **bridge):
        return run
    log.note("common_level_sets", discrepancy=common_level_set_discrepancy(field_bundle))
    return run


def logsumexp_window(signs) -> np.ndarray:
    """Boxes [0.05, 0.95] or [-0.95, -0.05] per component, avoiding u_i = 0."""
    lo, hi = WINDOW
    return np.array([(lo, hi) if s > 0 else (-hi, -lo) for s in signs])


def run_ac_logsumexp(m: int = 3, mesh: Optional[Mesh1D] = None, signs=None, L: float = 10.0,
                     n: int = 401, resolution: int = 33) -> ExampleRun:
    """
    Log-sum-exp system on the profiles u_i = s_i tanh(x / sqrt(2)).

    Returns:
        ExampleRun with checks orientable, residual, ag_inequality,
        equality_locus, decoupling, decoupled_pde
    """
    signs = tuple(int(s) for s in (signs if signs is not None else (1,) * m))
    if len(signs) != m or any(s not in (-1, 1) for s in signs):
        raise ValueError(f"Expected {m} signs in {{-1, +1}}, got {signs}")
    mesh = mesh or Mesh1D.symmetric(L, n)
    spec = ac_logsumexp(m)
    expected = tuple(s * signs[0] for s in signs)
    case = ExampleCase("ac-logsumexp", spec, [tanh_profile(s) for s in signs],
                       [tanh_profile_derivative(s) for s in signs], expected, {"signs": list(signs)})
    log = CheckLog()
    run = ExampleRun(case, log)

    if not _classify(log, ac_logsumexp(m, box=logsumexp_window(signs)), expected):
        return run
    field_bundle = FieldBundle.from_functions(mesh, case.exact)
    run.solution = field_bundle
    run.frames["profile"] = field_bundle.to_frame()
    if not _residual_stage(log, spec, field_bundle):
        return run

    lows, highs = field_bundle.values.min(axis=1), field_bundle.values.max(axis=1)
    axes = product_axes(lows, highs, resolution)
    grid_points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    excess_values = np.sum(allen_cahn_potential(grid_points), axis=-1) - spec.H(grid_points)
    worst = int(np.argmax(excess_values))
    excess = float(excess_values[worst])
    if not log.record("ag_inequality", excess <= 1e-12, max_excess=excess, witness=grid_points[worst].tolist(),
                      resolution=len(axes[0])):
        return run

    points = field_bundle.points
    locus_gap = float(np.max(np.abs(np.sum(allen_cahn_potential(points), axis=-1) - spec.H(points))))
    if not log.record("equality_locus", locus_gap <= 1e-12, max_gap=locus_gap):
        return run

    potentials = build_decoupling(field_bundle, spec)
    run.frames.update(potentials.frames())
    if not _allen_cahn_potentials_stage(log, potentials):
        return run
    decoupled = verify_decoupled_pde(field_bundle, potentials)
    log.record("decoupled_pde", decoupled["passed"], **decoupled)
    return run


def explicit_quadratic_potentials(field_bundle: FieldBundle) -> List[pd.DataFrame]:
    """
    V_1(t) = int s u_2^2(u_1^-1(s)) ds and V_2(t) = int s u_1^2(u_2^-1(s)) ds,
    integrated segment by segment with Simpson's rule on the sorted nodal values
    (u_j as a piecewise linear function of u_i), zero at the lowest value.
    """
    tables = []
    for i, j in ((0, 1), (1, 0)):
        order = np.argsort(field_bundle.values[i], kind="stable")
        s = field_bundle.values[i][order]
        partner = field_bundle.values[j][order]
        middle = 0.5 * (s[:-1] + s[1:])
        partner_middle = np.interp(middle, s, partner)
        x = np.column_stack([s[:-1], middle, s[1:]])
        y = x * np.column_stack([partner[:-1], partner_middle, partner[1:]]) ** 2
        pieces = simpson(y, x=x, axis=-1)
        tables.append(pd.DataFrame({"p": s, "V": np.concatenate(([0.0], np.cumsum(pieces)))}))
    return tables


def quadratic_boundary(scale: float = 1.0, swap: bool = False, low: float = 0.01, high: float = 3.0):
    boundary = [(scale * low, scale * high), (scale * high, scale * low)]
    return boundary[::-1] if swap else boundary


def _monotone_stage(log: CheckLog, field_bundle: FieldBundle) -> Optional[FieldBundle]:
    """Record the monotone window of a solve; None when the stage fails."""
    try:
        start, stop = monotone_window(field_bundle)
    except ValueError as e:
        log.record("monotone", False, error=str(e))
        return None
    window = field_bundle.restrict(start, stop)
    verdicts = check_monotone(window)
    passed = all(v.monotone for v in verdicts)
    if not log.record("monotone", passed, start=start, stop=stop, x_range=[window.mesh.x_lo, window.mesh.x_hi],
                      components=[v.to_dict() for v in verdicts]):
        return None
    return window


def _coarse_modica_excess(spec: NonlinearitySpec, mesh: Mesh1D, boundary, resolution: int) -> Optional[float]:
    """Largest Modica excess of the same run on every other node, or None when it cannot be built."""
    coarse_mesh = Mesh1D(mesh.x_lo, mesh.x_hi, (mesh.n + 1) // 2)
    coarse, report = solve_system_bvp(spec, coarse_mesh, boundary)
    if not report.converged:
        return None
    try:
        window = coarse.restrict(*monotone_window(coarse))
        potentials = build_decoupling(window, spec)
    except ValueError as e:
        logging.warning(f"Coarse Modica run unavailable: {e}")
        return None
    return modica_check(window, potentials, spec, resolution=resolution).max_excess


def run_quadratic_coupling(mesh: Optional[Mesh1D] = None, L: float = 12.0, n: int = 601, boundary=None,
                           scale: float = 1.0, swap: bool = False, resolution: int = 33,
                           eps_conj: float = EPS_CONJ) -> ExampleRun:
    """
    Coupled system u_1'' = u_1 u_2^2, u_2'' = u_1^2 u_2 on [-L/scale, L/scale].

    The fixed small boundary value sits above the decaying tail, so each
    component turns back in a thin layer at its small end. Checks after the
    solve run on the monotone window between those layers.

    Args:
        mesh : mesh; defaults to [-L/scale, L/scale] with n nodes
        boundary : Dirichlet pairs; defaults to u_1: (0.01, 3), u_2: (3, 0.01) times scale
        scale : scale factor lambda of u -> lambda u(lambda x)
        swap : exchange the two components' boundary data

    Returns:
        ExampleRun with checks orientable, solve, positivity, monotone, h_monotone,
        potentials, concavity, conjugacy, saturation, decoupled_solves, pushforward, modica
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    mesh = mesh or Mesh1D.symmetric(L / scale, n)
    boundary = [tuple(map(float, pair)) for pair in (boundary or quadratic_boundary(scale, swap))]
    ends = np.array(boundary)
    box = [(0.1 * ends.min(), 1.5 * ends.max())] * 2
    spec = quadratic_coupling(box=box)
    increasing = boundary[0][1] > boundary[0][0]
    expected = (1, -1)
    case = ExampleCase("quadratic-coupling", spec, expected_orientation=expected,
                       facts={"boundary": boundary, "scale": scale, "swap": swap, "first_increasing": increasing})
    log = CheckLog()
    run = ExampleRun(case, log)

    if not _classify(log, spec, expected):
        return run
    field_bundle, solve_report = solve_system_bvp(spec, mesh, boundary)
    run.solution = field_bundle
    run.frames["profile"] = field_bundle.to_frame()
    if not log.record("solve", solve_report.converged, **solve_report.to_dict()):
        return run
    minimum = float(field_bundle.values.min())
    if not log.record("positivity", minimum > 0.0, min_value=minimum):
        return run
    window = _monotone_stage(log, field_bundle)
    if window is None:
        return run
    run.window = window
    verdict = check_H_monotone(window, spec)
    if not log.record("h_monotone", verdict.h_monotone, **verdict.to_dict()):
        return run

    potentials = build_decoupling(window, spec)
    run.frames.update(potentials.frames())
    explicit = explicit_quadratic_potentials(window)
    gap = 0.0
    for i, table in enumerate(explicit):
        built = potentials.table(i)["V"].to_numpy()
        gap = max(gap, float(np.max(np.abs((built - built[0]) - (table["V"].to_numpy() - table["V"].iloc[0])))))
    if not log.record("potentials", gap <= EXPLICIT_TOL, max_gap=gap):
        return run

    concave = []
    for i in range(2):
        table = potentials.table(i)
        q = table["p"].to_numpy() ** 2
        F = 2.0 * table["V"].to_numpy()
        slopes = np.diff(F) / np.diff(q)
        concave.append(float(np.max(np.diff(slopes))))
    if not log.record("concavity", max(concave) <= CONCAVITY_TOL, max_slope_increase=concave):
        return run

    q1 = potentials.table(0)["p"].to_numpy() ** 2
    F1 = 2.0 * potentials.table(0)["V"].to_numpy()
    q2 = potentials.table(1)["p"].to_numpy() ** 2
    F2 = 2.0 * potentials.table(1)["V"].to_numpy()
    conjugate = np.min(q1[:, None] * q2[None, :] - F2[None, :], axis=1)
    conjugacy_gap = float(np.max(np.abs(F1 - conjugate)))
    if not log.record("conjugacy", conjugacy_gap <= eps_conj, max_gap=conjugacy_gap, tolerance=eps_conj):
        return run

    u1, u2 = window.values
    saturation = 2.0 * (potentials.value(0, u1) + potentials.value(1, u2)) - u1 ** 2 * u2 ** 2
    saturation_gap = float(np.max(np.abs(saturation)))
    if not log.record("saturation", saturation_gap <= SATURATION_TOL, max_gap=saturation_gap):
        return run

    solve_gaps = []
    for i, u in enumerate(window.values):
        scalar, scalar_report = solve_scalar_bvp(
            lambda p, i=i: potentials.derivative(i, p), window.mesh, window.boundary[i],
            potential_second_derivative=lambda p, i=i: potentials.second_derivative(i, p))
        solve_gaps.append(float(np.max(np.abs(scalar - u))) if scalar_report.converged else float("inf"))
    if not log.record("decoupled_solves", max(solve_gaps) <= DECOUPLED_SOLVE_TOL, max_gaps=solve_gaps):
        return run

    bridge = verify_pushforward_optimality(window, spec, orientation_from_field(window), resolution)
    if not log.record("pushforward", bridge["passed"], **bridge):
        return run

    modica = modica_check(window, potentials, spec, resolution=resolution)
    run.frames["modica"] = modica.to_frame(window.mesh.nodes)
    coarse_excess = _coarse_modica_excess(spec, mesh, boundary, resolution)
    richardson = 0.0 if coarse_excess is None else abs(coarse_excess - modica.max_excess)
    bound = modica.tolerance + modica.truncation_allowance + max(modica.discretization_allowance, richardson)
    if not log.record("modica", modica.passed is not None and modica.max_excess <= bound,
                      richardson_allowance=richardson, coarse_available=coarse_excess is not None, bound=bound,
                      **modica.to_dict()):
        return run
    log.note("common_level_sets", discrepancy=common_level_set_discrepancy(window))
    return run


def run_case(name: str, m: int = 2, L: Optional[float] = None, n: Optional[int] = None, signs=None,
             resolution: int = 33, scale: float = 1.0, swap: bool = False) -> ExampleRun:
    """Dispatch a run by case name with the default mesh of each case."""
    if (scale != 1.0 or swap) and name != "quadratic-coupling":
        raise ValueError("scale and swap apply to the quadratic-coupling case only")
    if name == "ac-quadratic":
        return run_ac_quadratic(m, L=L or 10.0, n=n or 401, resolution=resolution)
    if name == "ac-logsumexp":
        return run_ac_logsumexp(m, signs=signs, L=L or 10.0, n=n or 401, resolution=resolution)
    if name == "quadratic-coupling":
        return run_quadratic_coupling(L=L or 12.0, n=n or 601, scale=scale, swap=swap, resolution=resolution)
    raise ValueError(f"Unknown example '{name}'. Available: {', '.join(CASES)}")
