"""
Gradient System Boundary Value Problems

This module provides the finite-difference solver for the one-dimensional
gradient system u'' = grad H(u) on a truncated interval [x_lo, x_hi] with
Dirichlet data, the scalar solver for decoupled equations u'' = V'(u), and the
monotonicity and H-monotonicity tests of computed profiles.

Newton steps use the block-tridiagonal Jacobian (1/h^2) tridiag(I, -2I, I) - Hess H(u_k),
eliminated block by block; the scalar case goes through scipy's banded solver.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import solve_banded

from src.nonlinearity import EvaluationError, NonlinearitySpec, Orientation

logger = logging.getLogger(__name__)

EPS_NEWTON = 1e-10
EPS_MONO = 1e-12
MAX_ITERATIONS = 50
MAX_HALVINGS = 30
TAIL_WINDOW = 1e-3
TAIL_FLOOR = 1e-13
FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of n nodes on [x_lo, x_hi]."""

    x_lo: float
    x_hi: float
    n: int

    def __post_init__(self):
        if int(self.n) < 3:
            raise ValueError(f"A mesh needs at least 3 nodes, got {self.n}")
        if not (np.isfinite(self.x_lo) and np.isfinite(self.x_hi)) or self.x_hi <= self.x_lo:
            raise ValueError(f"Invalid interval [{self.x_lo}, {self.x_hi}]")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "x_lo", float(self.x_lo))
        object.__setattr__(self, "x_hi", float(self.x_hi))

    @classmethod
    def symmetric(cls, L: float, n: int) -> "Mesh1D":
        return cls(-float(L), float(L), n)

    @property
    def h(self) -> float:
        return (self.x_hi - self.x_lo) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n)

    @property
    def midpoint_index(self) -> int:
        return (self.n - 1) // 2

    def to_dict(self) -> dict:
        return {"x_lo": self.x_lo, "x_hi": self.x_hi, "n": self.n, "h": self.h}


@dataclass(frozen=True, eq=False)
class FieldBundle:
    """
    Nodal values of u = (u_1, ..., u_m) on a 1D mesh.

    values has shape (m, n); boundary pairs (a_i, b_i) must equal the first and
    last nodal values exactly and are read off the values when omitted.
    """

    mesh: Mesh1D
    values: np.ndarray
    boundary: Optional[tuple] = None

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[1] != self.mesh.n:
            raise ValueError(f"Components have {values.shape[1]} nodes, the mesh has {self.mesh.n}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Field values must be finite")
        ends = tuple((float(a), float(b)) for a, b in zip(values[:, 0], values[:, -1]))
        if self.boundary is not None:
            boundary = tuple((float(a), float(b)) for a, b in self.boundary)
            if boundary != ends:
                raise ValueError(f"Boundary data {boundary} differ from the end values {ends}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "boundary", ends)

    @classmethod
    def from_functions(cls, mesh: Mesh1D, functions) -> "FieldBundle":
        x = mesh.nodes
        return cls(mesh, np.vstack([np.broadcast_to(f(x), x.shape) for f in functions]))

    @classmethod
    def linear(cls, mesh: Mesh1D, boundary) -> "FieldBundle":
        values = np.vstack([np.linspace(a, b, mesh.n) for a, b in boundary])
        return cls(mesh, values)

    @property
    def m(self) -> int:
        return int(self.values.shape[0])

    @property
    def components(self) -> np.ndarray:
        return self.values

    @property
    def points(self) -> np.ndarray:
        """Nodal values as points of R^m, shape (n, m)."""
        return self.values.T

    def select(self, order) -> "FieldBundle":
        return FieldBundle(self.mesh, self.values[list(order)])

    def restrict(self, start: int, stop: int) -> "FieldBundle":
        """Field on the nodes start..stop (inclusive) with the same spacing."""
        nodes = self.mesh.nodes
        return FieldBundle(Mesh1D(nodes[start], nodes[stop], stop - start + 1), self.values[:, start:stop + 1])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"x": self.mesh.nodes})
        for i in range(self.m):
            frame[f"u{i + 1}"] = self.values[i]
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "FieldBundle":
        """Read a field from columns x, u1, ..., um on a uniform mesh."""
        if "x" not in frame.columns:
            raise ValueError("Field table needs an 'x' column")
        names = [c for c in frame.columns if c != "x"]
        expected = [f"u{i + 1}" for i in range(len(names))]
        if not names or names != expected:
            raise ValueError(f"Expected columns x,{','.join(expected) or 'u1'}, got {list(frame.columns)}")
        x = frame["x"].to_numpy(dtype=float)
        if len(x) < 3:
            raise ValueError("A field needs at least 3 nodes")
        mesh = Mesh1D(x[0], x[-1], len(x))
        if np.max(np.abs(x - mesh.nodes)) > 1e-9 * max(1.0, np.max(np.abs(x))):
            raise ValueError("Field nodes must be uniformly spaced")
        return cls(mesh, frame[names].to_numpy(dtype=float).T)


@dataclass
class SolveReport:
    iterations: int
    final_residual_norm: float
    converged: bool
    damping_history: List[float] = field(default_factory=list)
    residual_history: List[float] = field(default_factory=list)
    tail_constant: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.final_residual_norm):
            raise ValueError("Residual norm must be finite")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual_norm": self.final_residual_norm,
            "converged": self.converged,
            "damping_history": list(self.damping_history),
            "residual_history": list(self.residual_history),
            "tail_constant": self.tail_constant,
        }


def second_difference(values: np.ndarray, h: float) -> np.ndarray:
    """Centered second difference at the interior nodes, along the last axis."""
    return (values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]) / h ** 2


def system_residual(spec: NonlinearitySpec, field: FieldBundle) -> np.ndarray:
    """r_i(x_k) = (u_i(x_k+1) - 2u_i(x_k) + u_i(x_k-1))/h^2 - dH/dp_i(u(x_k)), shape (m, n-2)."""
    if field.m != spec.m:
        raise ValueError(f"Field has {field.m} components, spec has m = {spec.m}")
    return _system_residual(spec, field.values, field.mesh.h)


def _system_residual(spec: NonlinearitySpec, values: np.ndarray, h: float) -> np.ndarray:
    return second_difference(values, h) - spec.grad(values[:, 1:-1].T).T


def _block_thomas(diagonal: np.ndarray, off: float, rhs: np.ndarray) -> np.ndarray:
    """
    Solve the block-tridiagonal system with blocks diagonal[k] (m x m) on the
    diagonal and off * I above and below.

    Args:
        diagonal : (K, m, m) diagonal blocks
        off : scalar multiple of the identity on both off-diagonals
        rhs : (K, m) right-hand side

    Returns:
        (K, m) solution
    """
    K, m, _ = diagonal.shape
    eye = np.eye(m)
    upper = np.empty((K, m, m))
    reduced = np.empty((K, m))
    block = diagonal[0]
    upper[0] = np.linalg.solve(block, off * eye)
    reduced[0] = np.linalg.solve(block, rhs[0])
    for k in range(1, K):
        block = diagonal[k] - off * upper[k - 1]
        upper[k] = np.linalg.solve(block, off * eye)
        reduced[k] = np.linalg.solve(block, rhs[k] - off * reduced[k - 1])
    out = np.empty((K, m))
    out[-1] = reduced[-1]
    for k in range(K - 2, -1, -1):
        out[k] = reduced[k] - upper[k] @ out[k + 1]
    return out


def _tail_constant(history) -> float:
    ratios = [r1 / r0 ** 2 for r0, r1 in zip(history[:-1], history[1:])
              if 0.0 < r0 < TAIL_WINDOW and r1 > TAIL_FLOOR]
    return float(max(ratios)) if ratios else 0.0


def _damped_newton(values: np.ndarray, residual: Callable, direction: Callable, eps_newton: float,
                   max_iterations: int, max_halvings: int, label: str):
    """
    Damped Newton iteration on the interior nodes of values (m, n).

    The step is halved until the max-norm residual decreases; after
    max_halvings halvings the last trial is taken anyway.
    """
    current = residual(values)
    norm = float(np.max(np.abs(current))) if current.size else 0.0
    residuals, dampings = [norm], []
    iterations = 0
    while norm > eps_newton and iterations < max_iterations:
        step = direction(values, current)
        damping = 1.0
        for _ in range(max_halvings + 1):
            trial = values.copy()
            trial[:, 1:-1] += damping * step
            try:
                trial_residual = residual(trial)
                trial_norm = float(np.max(np.abs(trial_residual)))
            except EvaluationError:
                trial_norm = np.inf
            if trial_norm < norm:
                break
            damping *= 0.5
        else:
            damping *= 2.0
            logger.warning(f"{label}: no decrease after {max_halvings} halvings at iteration {iterations + 1}")
        if not np.isfinite(trial_norm):
            logger.warning(f"{label}: Newton step left the evaluable region; stopping")
            break
        values, current, norm = trial, trial_residual, trial_norm
        iterations += 1
        residuals.append(norm)
        dampings.append(damping)
        logger.debug(f"{label}: iteration {iterations}, residual {norm:.3e}, damping {damping:g}")

    converged = norm <= eps_newton
    report = SolveReport(iterations, norm, bool(converged), dampings, residuals, _tail_constant(residuals))
    if converged:
        logger.info(f"{label}: converged in {iterations} iterations, residual {norm:.3e}")
    else:
        logger.warning(f"{label}: not converged after {iterations} iterations, residual {norm:.3e}")
    return values, report


def _check_boundary(spec: NonlinearitySpec, boundary):
    boundary = [(float(a), float(b)) for a, b in boundary]
    if len(boundary) != spec.m:
        raise ValueError(f"Expected {spec.m} boundary pairs, got {len(boundary)}")
    for i, pair in enumerate(boundary):
        lo, hi = spec.domain[i]
        for value in pair:
            if not (lo <= value <= hi):
                raise ValueError(f"Boundary value {value} of component {i + 1} lies outside the domain [{lo}, {hi}]")
    return boundary


def _initial_values(mesh: Mesh1D, boundary, initial_guess) -> np.ndarray:
    if isinstance(initial_guess, str):
        if initial_guess != "linear":
            raise ValueError(f"Unknown initial guess '{initial_guess}'")
        return FieldBundle.linear(mesh, boundary).values.copy()
    if initial_guess.mesh != mesh:
        raise ValueError("Initial guess lives on a different mesh")
    if list(initial_guess.boundary) != list(boundary):
        raise ValueError(f"Initial guess boundary {initial_guess.boundary} differs from {boundary}")
    return initial_guess.values.copy()


def solve_system_bvp(spec: NonlinearitySpec, mesh: Mesh1D, boundary, initial_guess="linear",
                     eps_newton: float = EPS_NEWTON, max_iterations: int = MAX_ITERATIONS,
                     max_halvings: int = MAX_HALVINGS):
    """
    Solve u_i'' = dH/dp_i(u) on the mesh with u_i(x_lo) = a_i, u_i(x_hi) = b_i.

    Args:
        spec : non-linearity H
        mesh : uniform mesh
        boundary : m pairs (a_i, b_i) inside the domain box of H
        initial_guess : "linear" or a FieldBundle with the same boundary data
        eps_newton : max-norm residual target

    Returns:
        (FieldBundle, SolveReport); the last iterate when not converged
    """
    boundary = _check_boundary(spec, boundary)
    values = _initial_values(mesh, boundary, initial_guess)
    h = mesh.h

    def residual(v):
        return _system_residual(spec, v, h)

    def direction(v, r):
        diagonal = -spec.hess(v[:, 1:-1].T)
        diagonal -= (2.0 / h ** 2) * np.eye(spec.m)
        return _block_thomas(diagonal, 1.0 / h ** 2, -r.T).T

    values, report = _damped_newton(values, residual, direction, eps_newton, max_iterations, max_halvings,
                                    f"{spec.name} system")
    return FieldBundle(mesh, values, tuple(boundary)), report


def _central_derivative(function: Callable, u: np.ndarray) -> np.ndarray:
    step = FD_STEP * np.maximum(1.0, np.abs(u))
    return (np.asarray(function(u + step)) - np.asarray(function(u - step))) / (2.0 * step)


def solve_scalar_bvp(potential_derivative: Callable, mesh: Mesh1D, boundary, initial_guess="linear",
                     potential_second_derivative: Optional[Callable] = None, eps_newton: float = EPS_NEWTON,
                     max_iterations: int = MAX_ITERATIONS, max_halvings: int = MAX_HALVINGS):
    """
    Solve u'' = V'(u) with u(x_lo) = a, u(x_hi) = b.

    V'' defaults to a central difference of V' when not supplied.

    Returns:
        (nodal values, SolveReport)
    """
    a, b = (float(v) for v in boundary)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError(f"Boundary values must be finite, got ({a}, {b})")
    if isinstance(initial_guess, str):
        values = _initial_values(mesh, [(a, b)], initial_guess)
    else:
        guess = np.asarray(initial_guess, dtype=float).reshape(1, -1)
        if guess.shape[1] != mesh.n or guess[0, 0] != a or guess[0, -1] != b:
            raise ValueError("Initial guess must match the mesh and the boundary values")
        values = guess.copy()
    h = mesh.h
    second = potential_second_derivative or (lambda u: _central_derivative(potential_derivative, u))

    def residual(v):
        slope = np.asarray(potential_derivative(v[0, 1:-1]), dtype=float)
        if not np.all(np.isfinite(slope)):
            raise EvaluationError("potential derivative", v[0, 1:-1], "non-finite value")
        return (second_difference(v[0], h) - slope)[None, :]

    def direction(v, r):
        K = mesh.n - 2
        banded = np.zeros((3, K))
        banded[0, 1:] = 1.0 / h ** 2
        banded[1] = -2.0 / h ** 2 - np.asarray(second(v[0, 1:-1]), dtype=float)
        banded[2, :-1] = 1.0 / h ** 2
        return solve_banded((1, 1), banded, -r[0])[None, :]

    values, report = _damped_newton(values, residual, direction, eps_newton, max_iterations, max_halvings,
                                    "scalar")
    return values[0], report


@dataclass(frozen=True)
class MonotoneVerdict:
    """Direction of one component (1-based); witness is the first offending node."""

    component: int
    direction: str
    witness: Optional[int] = None

    @property
    def monotone(self) -> bool:
        return self.direction in ("increasing", "decreasing")

    @property
    def sign(self) -> int:
        return {"increasing": 1, "decreasing": -1}.get(self.direction, 0)

    def to_dict(self) -> dict:
        return {"component": self.component, "direction": self.direction, "witness": self.witness}


def check_monotone(field: FieldBundle, eps_mono: float = EPS_MONO) -> List[MonotoneVerdict]:
    """
    Strict monotonicity of every component by forward differences.

    Interior differences must exceed eps_mono in the direction of travel; the
    two differences touching the ends only need the right sign.
    """
    verdicts = []
    for i, u in enumerate(field.values, start=1):
        sign = np.sign(u[-1] - u[0])
        if sign == 0:
            verdicts.append(MonotoneVerdict(i, "non-monotone", 0))
            continue
        steps = sign * np.diff(u)
        bad = steps <= eps_mono
        bad[0] = steps[0] < 0
        bad[-1] = steps[-1] < 0
        if bad.any():
            verdicts.append(MonotoneVerdict(i, "non-monotone", int(np.flatnonzero(bad)[0])))
        else:
            verdicts.append(MonotoneVerdict(i, "increasing" if sign > 0 else "decreasing"))
    return verdicts


def monotone_window(field: FieldBundle) -> Tuple[int, int]:
    """
    Node range (start, stop) between the last start-side extreme and the first
    end-side extreme of the components.

    A convex or concave component pulled away from its natural tail by
    Dirichlet data turns back in a boundary layer; the window drops those
    layers. Components are not checked for monotonicity inside the window.
    """
    start, stop = 0, field.mesh.n - 1
    for u in field.values:
        sign = np.sign(u[-1] - u[0])
        if sign == 0:
            continue
        start = max(start, int(np.argmin(sign * u)))
        stop = min(stop, int(np.argmax(sign * u)))
    if stop - start < 2:
        raise ValueError(f"No monotone window with at least 3 nodes (start {start}, stop {stop})")
    return start, stop


@dataclass(frozen=True)
class HMonotoneVerdict:
    h_monotone: bool
    anti_monotone: bool
    witness_node: Optional[int] = None
    witness_pair: Optional[tuple] = None
    violating_nodes: int = 0
    extreme_product: float = 0.0

    @property
    def verdict(self) -> str:
        if self.h_monotone:
            return "H-monotone"
        if self.anti_monotone:
            return "anti-monotone"
        return "violated"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "witness_node": self.witness_node,
            "witness_pair": None if self.witness_pair is None else list(self.witness_pair),
            "violating_nodes": self.violating_nodes,
            "extreme_product": self.extreme_product,
        }


def check_H_monotone(field: FieldBundle, spec: NonlinearitySpec, eps_mono: float = EPS_MONO) -> HMonotoneVerdict:
    """
    Sign of H_ij(u(x_k)) du_i du_j at the interior nodes (forward differences), i != j.

    All products negative is H-monotone; all positive is the anti-monotone case
    (-H)-monotone. Otherwise the first node and pair with a non-negative
    product is the witness.

    Raises:
        ValueError: when a component is not monotone
    """
    bad = [v for v in check_monotone(field, eps_mono) if not v.monotone]
    if bad:
        raise ValueError(f"Component {bad[0].component} is not monotone (witness node {bad[0].witness})")
    if field.m != spec.m:
        raise ValueError(f"Field has {field.m} components, spec has m = {spec.m}")

    steps = np.diff(field.values, axis=1)[:, 1:]
    hess = spec.hess(field.values[:, 1:-1].T)
    products = hess * steps.T[:, :, None] * steps.T[:, None, :]
    off = ~np.eye(spec.m, dtype=bool)
    off_products = products[:, off]
    negative = bool(np.all(off_products < 0))
    positive = bool(np.all(off_products > 0))

    nonnegative = (products >= 0) & off[None]
    violating = np.flatnonzero(nonnegative.any(axis=(1, 2)))
    node, pair = None, None
    if len(violating):
        k = int(violating[0])
        i, j = np.argwhere(nonnegative[k])[0]
        node, pair = k + 1, (int(i) + 1, int(j) + 1)
    extreme = float(off_products.max()) if off_products.size else 0.0
    return HMonotoneVerdict(negative, positive, node, pair, int(len(violating)), extreme)


def orientation_from_field(field: FieldBundle, eps_mono: float = EPS_MONO) -> Orientation:
    """Directions of the components, normalized so that the first is +1."""
    verdicts = check_monotone(field, eps_mono)
    bad = [v for v in verdicts if not v.monotone]
    if bad:
        raise ValueError(f"Component {bad[0].component} is not monotone (witness node {bad[0].witness})")
    first = verdicts[0].sign
    return Orientation(tuple(first * v.sign for v in verdicts))
