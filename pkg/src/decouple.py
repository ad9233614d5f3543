"""
Decoupling Potentials

This module provides the construction of potentials V_i(p_i) from a monotone
one-dimensional solution of u'' = grad H(u), such that each component solves
the scalar equation u_i'' = V_i'(u_i), together with the checks that come
with them: the identity sum_i V_i(u_i) = H(u) along the solution, the global
inequality sum_i V_i(p_i) <= H(p) (or >= in the anti-monotone case) and the
Modica-type gradient bound.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd

from src.mmot1d import PathPotentials, apply_gauge, integrate_path, max_over_product, product_axes
from src.nonlinearity import NonlinearitySpec
from src.pde import FieldBundle, check_H_monotone, check_monotone, second_difference, system_residual

EPS_DECOUPLE = 1e-6
SOLUTION_RESIDUAL_WARNING = 1e-6
DEFAULT_RESOLUTION = 33


@dataclass(frozen=True, eq=False)
class DecouplingPotentials(PathPotentials):
    """
    Potentials tabulated on the nodal values of a monotone field.

    vertices are the nodal points u(x_k) in mesh order, so V_i'(u_i(x_k)) is
    dH/dp_i(u(x_k)) by construction; the gauge pins sum_i V_i = H at base_index.
    """

    def gauge(self) -> dict:
        return {"base_node": self.base_index, "joint_constant": self.joint_constant}

    def manifest(self) -> dict:
        return {
            "gauge": self.gauge(),
            "interpolation": self.interpolation,
            "ranges": [list(self.range(i)) for i in range(self.m)],
            "spec": self.spec.name,
        }


def _require_monotone(field: FieldBundle):
    bad = [v for v in check_monotone(field) if not v.monotone]
    if bad:
        raise ValueError(f"Component {bad[0].component} is not monotone (witness node {bad[0].witness})")


def build_decoupling(field: FieldBundle, spec: NonlinearitySpec, interpolation: str = "path",
                     check_residual: bool = True) -> DecouplingPotentials:
    """
    Potentials V_i with V_i'(p_i) = dH/dp_i(u(x(p_i))) along a monotone field.

    Args:
        field : monotone 1D field
        spec : non-linearity H
        interpolation : "path" (integrate along the solution curve) or "linear"
        check_residual : warn when the field does not solve the system

    Returns:
        DecouplingPotentials gauged at the mesh midpoint node

    Raises:
        ValueError: when a component is not monotone
    """
    _require_monotone(field)
    if field.m != spec.m:
        raise ValueError(f"Field has {field.m} components, spec has m = {spec.m}")
    if check_residual:
        residual = float(np.max(np.abs(system_residual(spec, field))))
        if residual > SOLUTION_RESIDUAL_WARNING:
            logging.warning(f"Field residual {residual:.3e} exceeds {SOLUTION_RESIDUAL_WARNING:g}; "
                            f"the potentials decouple an approximate solution")

    vertices = field.points
    base = field.mesh.midpoint_index
    values, slopes = integrate_path(vertices, spec)
    values, joint = apply_gauge(values, vertices, spec, base)
    logging.info(f"Built decoupling potentials for {spec.name} on {field.mesh.n} nodes "
                 f"(base node {base}, joint constant {joint:.6g})")
    return DecouplingPotentials(vertices, values, slopes, spec, base, joint, interpolation)


def verify_on_solution_identity(field: FieldBundle, potentials: PathPotentials, spec: NonlinearitySpec,
                                eps_decouple: float = EPS_DECOUPLE) -> dict:
    """max_k |sum_i V_i(u_i(x_k)) - H(u(x_k))|."""
    points = field.points
    gap = np.abs(potentials.sum_at(points) - spec.H(points))
    worst = int(np.argmax(gap))
    return {"max_gap": float(gap[worst]), "witness_node": worst, "tolerance": eps_decouple,
            "passed": bool(gap[worst] <= eps_decouple)}


def verify_global_inequality(field: FieldBundle, potentials: PathPotentials, spec: NonlinearitySpec,
                             resolution: int = DEFAULT_RESOLUTION, eps_decouple: float = EPS_DECOUPLE) -> dict:
    """
    sum_i V_i(p_i) <= H(p) on the product of the component ranges for an
    H-monotone field, >= for an anti-monotone one.

    Raises:
        ValueError: when the field is neither H-monotone nor anti-monotone
    """
    verdict = check_H_monotone(field, spec)
    if verdict.h_monotone:
        sense, sign = "<=", 1.0
    elif verdict.anti_monotone:
        sense, sign = ">=", -1.0
    else:
        raise ValueError(f"Field is neither H-monotone nor anti-monotone: node {verdict.witness_node}, "
                         f"pair {verdict.witness_pair}")
    ranges = [potentials.range(i) for i in range(potentials.m)]
    axes = product_axes([r[0] for r in ranges], [r[1] for r in ranges], resolution)
    violation, witness = max_over_product(axes, potentials, spec, sign)
    violation = max(violation, 0.0)
    logging.info(f"Global inequality ({sense}): max violation {violation:.3e} on {len(axes[0])}^{len(axes)} points")
    return {
        "sense": sense,
        "max_violation": violation,
        "witness": None if witness is None else [float(v) for v in witness],
        "resolution": len(axes[0]),
        "tolerance": eps_decouple,
        "passed": bool(violation <= eps_decouple),
    }


def verify_decoupled_pde(field: FieldBundle, potentials: PathPotentials, eps_decouple: float = EPS_DECOUPLE) -> dict:
    """Residual of u_i'' = V_i'(u_i) against the tabulated derivatives."""
    h = field.mesh.h
    residual = np.vstack([second_difference(u, h) - potentials.derivative(i, u[1:-1])
                          for i, u in enumerate(field.values)])
    coupled = float(np.max(np.abs(system_residual(potentials.spec, field))))
    worst = float(np.max(np.abs(residual)))
    threshold = max(eps_decouple, 10.0 * coupled)
    return {"max_residual": worst, "coupled_residual": coupled, "threshold": threshold,
            "passed": bool(worst <= threshold)}


@dataclass(eq=False)
class ModicaReport:
    """
    Pointwise sides of 1/2 sum_i |u_i'|^2 <= H(u) - sum_i min V_i and the 1D
    refinement 1/2 sum_i u_i'^2 = sum_i V_i(u_i) - sum_i C_i.
    """

    lhs: np.ndarray
    rhs: np.ndarray
    minima: np.ndarray
    constants: np.ndarray
    max_excess: float
    refinement_gap: float
    limit_gap: float
    anti_excess: Optional[float]
    truncation_allowance: float
    h_monotone: Optional[str]
    passed: Optional[bool]
    tolerance: float = EPS_DECOUPLE
    discretization_allowance: float = 0.0

    def to_dict(self) -> dict:
        return {
            "max_excess": self.max_excess,
            "minima": self.minima.tolist(),
            "constants": self.constants.tolist(),
            "refinement_gap": self.refinement_gap,
            "limit_gap": self.limit_gap,
            "anti_excess": self.anti_excess,
            "truncation_allowance": self.truncation_allowance,
            "discretization_allowance": self.discretization_allowance,
            "h_monotone": self.h_monotone,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }

    def to_frame(self, x: np.ndarray) -> pd.DataFrame:
        return pd.DataFrame({"x": x, "gradient_energy": self.lhs, "bound": self.rhs})


def modica_check(field: FieldBundle, potentials: PathPotentials, spec: NonlinearitySpec, gradients=None,
                 resolution: int = DEFAULT_RESOLUTION, eps_decouple: float = EPS_DECOUPLE) -> ModicaReport:
    """
    Modica-type estimate along a monotone 1D field.

    Args:
        field : monotone field the potentials were built from
        potentials : decoupling potentials
        spec : non-linearity H
        gradients : optional exact (m, n) derivatives; second-order differences otherwise,
            in which case the change of the gradient energy on every other node is
            added to the tolerance

    Returns:
        ModicaReport; passed is None when some V_i is constant (no verdict)
    """
    _require_monotone(field)
    h = field.mesh.h
    discretization = 0.0
    if gradients is None:
        gradients = np.vstack([np.gradient(u, h, edge_order=2) for u in field.values])
        discretization = _gradient_energy_error(field.values, gradients, h)
    gradients = np.asarray(gradients, dtype=float)
    points = field.points

    lhs = 0.5 * np.sum(gradients ** 2, axis=0)
    h_values = spec.H(points)
    node_values = np.column_stack([potentials.value(i, field.values[i]) for i in range(field.m)])
    minima = node_values.min(axis=0)
    rhs = h_values - minima.sum()
    max_excess = float(np.max(lhs - rhs))

    constants = node_values[-1]
    refinement_gap = float(np.max(np.abs(lhs - (node_values.sum(axis=1) - constants.sum()))))
    limit_gap = float(abs(h_values[-1] - constants.sum()))

    ranges = [potentials.range(i) for i in range(field.m)]
    axes = product_axes([r[0] for r in ranges], [r[1] for r in ranges], resolution)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, field.m)
    anti_excess = float(np.max(lhs - h_values)) if spec.H(mesh).min() >= 0 else None

    lows = node_values.argmin(axis=0)
    allowance = float(0.5 * np.sum(gradients[np.arange(field.m), lows] ** 2))

    try:
        h_monotone = check_H_monotone(field, spec).verdict
    except ValueError:
        h_monotone = None

    spread = node_values.max(axis=0) - minima
    if np.all(spread > eps_decouple):
        passed = bool(max_excess <= eps_decouple + allowance + discretization)
    else:
        logging.info("A decoupling potential is constant; Modica values reported without a verdict")
        passed = None
    return ModicaReport(lhs, rhs, minima, constants, max_excess, refinement_gap, limit_gap, anti_excess,
                        allowance, h_monotone, passed, eps_decouple, discretization)


def _gradient_energy_error(values: np.ndarray, gradients: np.ndarray, h: float) -> float:
    """Gap between 1/2 sum |u_i'|^2 from differences on the mesh and on every other node."""
    coarse_values = values[:, ::2]
    if coarse_values.shape[1] < 3:
        return 0.0
    coarse = np.vstack([np.gradient(u, 2.0 * h, edge_order=2) for u in coarse_values])
    fine = 0.5 * np.sum(gradients[:, ::2] ** 2, axis=0)
    return float(np.max(np.abs(fine - 0.5 * np.sum(coarse ** 2, axis=0))))


def build_decoupling_slices(box_field, spec: NonlinearitySpec, interpolation: str = "path") -> List[DecouplingPotentials]:
    """
    One decoupling construction per vertical line of a gridded field.

    Slices are independent; no aggregation across x' is attempted.
    """
    slices = []
    for line in box_field.vertical_lines():
        slices.append(build_decoupling(line, spec, interpolation, check_residual=False))
    logging.info(f"Built {len(slices)} slice-wise decouplings")
    return slices
