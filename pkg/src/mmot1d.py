"""
One-Dimensional Multi-Marginal Transport

This module provides the monotone (comonotone after sign flips) solution of the
multi-marginal transport problem min sum_k w_k H(support_k) for one-dimensional
marginals, the Kantorovich potentials obtained by integrating dH/dp_i along the
support curve, a duality certificate on a product grid, and a brute-force
permutation oracle for tiny instances.
"""

import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.nonlinearity import NonlinearitySpec, Orientation

logger = logging.getLogger(__name__)

EPS_DUAL = 1e-8
MERGE_TOL = 1e-14
MASS_TOL = 1e-13
WEIGHT_TOL = 1e-12
DEFAULT_RESOLUTION = 33
MAX_GRID_EVALUATIONS = 1_200_000
ORACLE_MAX_ATOMS = 6
ORACLE_MAX_MARGINALS = 4
GAUSS_ORDER = 5

_legendre_nodes, _legendre_weights = np.polynomial.legendre.leggauss(GAUSS_ORDER)
GAUSS_NODES = 0.5 * (_legendre_nodes + 1.0)
GAUSS_WEIGHTS = 0.5 * _legendre_weights


class OracleBoundError(ValueError):
    """Raised when a brute-force enumeration would exceed its bound."""


@dataclass(frozen=True, eq=False)
class DiscreteMarginal:
    """Probability measure on finitely many strictly increasing atoms."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.size == 0:
            raise ValueError("A marginal needs at least one atom")
        if atoms.shape != weights.shape:
            raise ValueError(f"{atoms.size} atoms but {weights.size} weights")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise ValueError("Atoms and weights must be finite")
        if np.any(np.diff(atoms) <= 0):
            raise ValueError("Atoms must be strictly increasing")
        if np.any(weights <= 0):
            raise ValueError("Weights must be positive")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"Weights must sum to 1, got {weights.sum():.17g}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return int(self.atoms.size)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.weights)

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.n) <= WEIGHT_TOL))

    def quantile(self, levels) -> np.ndarray:
        """Left-continuous generalized inverse Q(t) = inf{x : F(x) >= t}."""
        index = np.searchsorted(self.cumulative, np.asarray(levels, dtype=float), side="left")
        return self.atoms[np.clip(index, 0, self.n - 1)]

    def flipped(self) -> "DiscreteMarginal":
        return DiscreteMarginal(-self.atoms[::-1], self.weights[::-1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"atom": self.atoms, "weight": self.weights})


def marginal_from_field(values, weights=None) -> DiscreteMarginal:
    """
    Pushforward of a (weighted) point set onto the real line.

    Values closer than 1e-14 are merged and their weights summed; weights are
    normalized to total mass 1 and default to uniform.

    Args:
        values : finite values
        weights : optional positive weights of the same length

    Returns:
        DiscreteMarginal
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("Cannot build a marginal from an empty set of values")
    if not np.all(np.isfinite(values)):
        raise ValueError("Field values must be finite")
    if weights is None:
        weights = np.ones_like(values)
    else:
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != values.shape:
            raise ValueError(f"{values.size} values but {weights.size} weights")
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise ValueError("Weights must be positive and finite")

    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    sorted_weights = weights[order]
    starts = np.concatenate(([True], np.diff(sorted_values) > MERGE_TOL))
    groups = np.cumsum(starts) - 1
    merged = np.bincount(groups, weights=sorted_weights)
    return DiscreteMarginal(sorted_values[starts], merged / merged.sum())


@dataclass(frozen=True, eq=False)
class MonotoneCoupling:
    """Weighted support tuples in R^m, ordered along the support curve."""

    support: np.ndarray
    weights: np.ndarray
    orientation: Orientation

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if support.shape[0] != weights.size:
            raise ValueError("Support and weights have different lengths")
        if support.shape[1] != self.orientation.m:
            raise ValueError("Support dimension does not match the orientation")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @property
    def m(self) -> int:
        return int(self.support.shape[1])

    def marginal(self, i: int) -> DiscreteMarginal:
        return marginal_from_field(self.support[:, i], self.weights)

    def is_comonotone(self) -> bool:
        """Support non-decreasing in every flipped coordinate."""
        flipped = self.support * self.orientation.as_array()
        return bool(np.all(np.diff(flipped, axis=0) >= -MERGE_TOL))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.support, columns=[f"p{i + 1}" for i in range(self.m)])
        frame["weight"] = self.weights
        return frame


def _mass_levels(marginals) -> np.ndarray:
    levels = np.unique(np.clip(np.concatenate([[0.0]] + [mu.cumulative for mu in marginals]), 0.0, 1.0))
    keep = np.concatenate(([True], np.diff(levels) > MASS_TOL))
    levels = levels[keep]
    if 1.0 - levels[-1] <= MASS_TOL:
        levels[-1] = 1.0
    else:
        levels = np.append(levels, 1.0)
    return levels


def solve_monotone(marginals, orientation: Orientation) -> MonotoneCoupling:
    """
    Simultaneous-quantile coupling of the marginals in the flipped coordinates.

    Args:
        marginals : list of m DiscreteMarginal
        orientation : sign vector sigma

    Returns:
        MonotoneCoupling ordered by cumulative mass
    """
    if len(marginals) < 2:
        raise ValueError("At least two marginals are required")
    if len(marginals) != orientation.m:
        raise ValueError(f"{len(marginals)} marginals but an orientation of length {orientation.m}")
    sigma = orientation.as_array()
    flipped = [mu if s > 0 else mu.flipped() for mu, s in zip(marginals, sigma)]
    levels = _mass_levels(flipped)
    midpoints = 0.5 * (levels[:-1] + levels[1:])
    support = np.column_stack([mu.quantile(midpoints) for mu in flipped]) * sigma
    return MonotoneCoupling(support, np.diff(levels), orientation)


def coupling_cost(coupling: MonotoneCoupling, spec: NonlinearitySpec) -> float:
    """Sum of w_k H(support_k)."""
    return float(np.dot(coupling.weights, spec.H(coupling.support)))


def integrate_path(vertices: np.ndarray, spec: NonlinearitySpec):
    """
    Line integrals of dH/dp_i along the polygon through the vertices.

    Each straight segment is integrated with a Gauss-Legendre rule, so the
    sum over i of the increments telescopes to H(end) - H(start).

    Returns:
        (values, slopes): cumulative integrals (zero at vertex 0) and the
        gradient of H at the vertices, both of shape (K, m)
    """
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    m = vertices.shape[1]
    slopes = spec.grad(vertices)
    if len(vertices) == 1:
        return np.zeros((1, m)), slopes
    delta = np.diff(vertices, axis=0)
    nodes = vertices[:-1, None, :] + GAUSS_NODES[None, :, None] * delta[:, None, :]
    mean_grad = np.einsum("q,kqm->km", GAUSS_WEIGHTS, spec.grad(nodes))
    values = np.vstack([np.zeros(m), np.cumsum(delta * mean_grad, axis=0)])
    return values, slopes


def apply_gauge(values: np.ndarray, vertices: np.ndarray, spec: NonlinearitySpec, base_index: int):
    """
    Pin V_i = 0 at each lowest table point, then shift V_1 so that
    sum_i V_i = H at the base vertex.

    Returns:
        (gauged values, joint constant added to V_1)
    """
    values = values.copy()
    for i in range(values.shape[1]):
        values[:, i] -= values[np.argmin(vertices[:, i]), i]
    joint = float(spec.H(vertices[base_index]) - values[base_index].sum())
    values[:, 0] += joint
    return values, joint


@dataclass(frozen=True, eq=False)
class PathPotentials:
    """
    Potentials V_i tabulated at the vertices of a monotone polygon in p-space.

    Between table entries V_i is evaluated by integrating dH/dp_i along the
    same polygon segment ('path'), or by linear interpolation ('linear').
    """

    vertices: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    spec: NonlinearitySpec
    base_index: int = 0
    joint_constant: float = 0.0
    interpolation: str = "path"

    @property
    def m(self) -> int:
        return int(self.vertices.shape[1])

    def range(self, i: int):
        return float(self.vertices[:, i].min()), float(self.vertices[:, i].max())

    def is_degenerate(self, i: int) -> bool:
        lo, hi = self.range(i)
        return hi <= lo

    def table(self, i: int) -> pd.DataFrame:
        """Strictly increasing p-grid with V_i and dV_i/dp_i."""
        coordinate = self.vertices[:, i]
        order = np.argsort(coordinate, kind="stable")
        p = coordinate[order]
        keep = np.concatenate(([True], np.diff(p) > 0))
        return pd.DataFrame({"p": p[keep], "V": self.values[order, i][keep], "Vprime": self.slopes[order, i][keep]})

    def _locate(self, i: int, p: np.ndarray):
        coordinate = self.vertices[:, i]
        direction = 1.0 if coordinate[-1] >= coordinate[0] else -1.0
        ordered = direction * coordinate
        query = direction * p
        k = np.clip(np.searchsorted(ordered, query, side="right") - 1, 0, len(coordinate) - 2)
        span = ordered[k + 1] - ordered[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(span > 0, (query - ordered[k]) / span, 0.0)
        return k, np.clip(s, 0.0, 1.0)

    def value(self, i: int, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.is_degenerate(i) or len(self.vertices) == 1:
            return np.full(p.shape, self.values[0, i])
        if self.interpolation == "linear":
            table = self.table(i)
            return np.interp(p, table["p"].to_numpy(), table["V"].to_numpy())
        flat = p.ravel()
        k, s = self._locate(i, flat)
        delta = self.vertices[k + 1] - self.vertices[k]
        nodes = self.vertices[k][:, None, :] + (s[:, None] * GAUSS_NODES[None, :])[..., None] * delta[:, None, :]
        mean_grad = self.spec.grad(nodes)[..., i] @ GAUSS_WEIGHTS
        return (self.values[k, i] + s * delta[:, i] * mean_grad).reshape(p.shape)

    def derivative(self, i: int, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.is_degenerate(i) or len(self.vertices) == 1:
            return np.full(p.shape, self.slopes[0, i])
        flat = p.ravel()
        k, s = self._locate(i, flat)
        points = self.vertices[k] + s[:, None] * (self.vertices[k + 1] - self.vertices[k])
        return self.spec.grad(points)[:, i].reshape(p.shape)

    def second_derivative(self, i: int, p) -> np.ndarray:
        """d^2 V_i / dp_i^2 along the polygon segment containing p."""
        p = np.asarray(p, dtype=float)
        if self.is_degenerate(i) or len(self.vertices) == 1:
            return np.zeros(p.shape)
        flat = p.ravel()
        k, s = self._locate(i, flat)
        delta = self.vertices[k + 1] - self.vertices[k]
        points = self.vertices[k] + s[:, None] * delta
        hess = self.spec.hess(points)
        along = np.einsum("kj,kj->k", hess[:, i, :], delta)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(delta[:, i] != 0, along / delta[:, i], hess[:, i, i])
        return out.reshape(p.shape)

    def sum_at(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return sum(self.value(i, points[..., i]) for i in range(self.m))

    def shifted(self, shifts):
        """Potentials with V_i + c_i."""
        shifts = np.asarray(shifts, dtype=float)
        return replace(self, values=self.values + shifts, joint_constant=self.joint_constant + float(shifts[0]))

    def frames(self) -> dict:
        return {f"V{i + 1}": self.table(i) for i in range(self.m)}


@dataclass(frozen=True, eq=False)
class DualPotentials(PathPotentials):
    """Kantorovich potentials of a monotone coupling."""


def build_potentials(coupling: MonotoneCoupling, spec: NonlinearitySpec, interpolation: str = "path") -> DualPotentials:
    """
    Kantorovich potentials of a monotone coupling.

    dV_i/dp_i = dH/dp_i along the support curve (flat coordinates accumulate
    nothing); constants fixed so that sum_i V_i = H at the first support tuple.
    """
    vertices = coupling.support
    values, slopes = integrate_path(vertices, spec)
    values, joint = apply_gauge(values, vertices, spec, 0)
    potentials = DualPotentials(vertices, values, slopes, spec, 0, joint, interpolation)
    for i in range(coupling.m):
        if potentials.is_degenerate(i):
            logger.warning(f"Component {i + 1} of the support is a single value; V_{i + 1} is a one-point table")
    return potentials


def product_axes(lows, highs, resolution: int = DEFAULT_RESOLUTION):
    """Per-axis grids over a box, reduced so the product stays under the evaluation cap."""
    m = len(lows)
    per_axis = max(2, min(int(resolution), int(math.floor(MAX_GRID_EVALUATIONS ** (1.0 / m) + 1e-9))))
    return [np.linspace(lo, hi, per_axis) if hi > lo else np.array([lo]) for lo, hi in zip(lows, highs)]


def max_over_product(axes, potentials: PathPotentials, spec: NonlinearitySpec, sense: float = 1.0):
    """
    Maximum of sense * (sum_i V_i(p_i) - H(p)) over the product of the axes.

    Returns:
        (maximum, maximizing point)
    """
    m = len(axes)
    per_axis_values = [potentials.value(i, axes[i]) for i in range(m)]
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, m - 1)
    rest_sum = sum(np.meshgrid(*per_axis_values[1:], indexing="ij")).ravel()
    best, best_point = -np.inf, None
    for a, v in zip(axes[0], per_axis_values[0]):
        points = np.column_stack([np.full(len(rest), a), rest])
        gap = sense * (v + rest_sum - spec.H(points))
        k = int(np.argmax(gap))
        if gap[k] > best:
            best, best_point = float(gap[k]), points[k]
    return best, best_point


@dataclass(frozen=True)
class DualityCertificate:
    primal_cost: float
    dual_value: float
    max_feasibility_violation: float
    max_support_gap: float
    resolution: int
    tolerance: float = EPS_DUAL

    @property
    def passed(self) -> bool:
        return bool(self.max_feasibility_violation <= self.tolerance
                    and self.max_support_gap <= self.tolerance
                    and abs(self.primal_cost - self.dual_value) <= self.tolerance * (1.0 + abs(self.primal_cost)))

    def to_dict(self) -> dict:
        return {
            "primal": self.primal_cost,
            "dual": self.dual_value,
            "max_violation": self.max_feasibility_violation,
            "max_support_gap": self.max_support_gap,
            "resolution": self.resolution,
            "pass": self.passed,
        }


def certify(coupling: MonotoneCoupling, potentials: PathPotentials, spec: NonlinearitySpec,
            product_grid_resolution: int = DEFAULT_RESOLUTION, eps_dual: float = EPS_DUAL) -> DualityCertificate:
    """
    Duality certificate: feasibility on the product of the marginal ranges,
    equality on the support and primal = dual.
    """
    marginals = [coupling.marginal(i) for i in range(coupling.m)]
    axes = product_axes([mu.atoms[0] for mu in marginals], [mu.atoms[-1] for mu in marginals],
                        product_grid_resolution)
    violation, _ = max_over_product(axes, potentials, spec)
    support_gap = float(np.max(np.abs(spec.H(coupling.support) - potentials.sum_at(coupling.support))))
    primal = coupling_cost(coupling, spec)
    dual = float(sum(np.dot(mu.weights, potentials.value(i, mu.atoms)) for i, mu in enumerate(marginals)))
    certificate = DualityCertificate(primal, dual, violation, support_gap, len(axes[0]), eps_dual)
    logger.info(f"Certificate: primal {primal:.12g}, dual {dual:.12g}, violation {violation:.3e}, "
                f"support gap {support_gap:.3e}, pass = {certificate.passed}")
    return certificate


def c_transform(potentials: PathPotentials, spec: NonlinearitySpec, i: int, p_values,
                resolution: int = DEFAULT_RESOLUTION, include_support: bool = True) -> np.ndarray:
    """
    Inf-convolution min over p_-i of H(p) - sum_{j != i} V_j(p_j).

    The other coordinates range over the product grid of their table ranges
    (plus the support coordinates when include_support is set). Evaluated at
    p_values it extends V_i off its range.
    """
    p_values = np.atleast_1d(np.asarray(p_values, dtype=float))
    others = [j for j in range(potentials.m) if j != i]
    ranges = [potentials.range(j) for j in others]
    axes = product_axes([r[0] for r in ranges], [r[1] for r in ranges], resolution)
    if include_support:
        axes = [np.unique(np.concatenate([axis, potentials.vertices[:, j]])) for axis, j in zip(axes, others)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(others))
    other_sum = sum(potentials.value(j, mesh[:, n]) for n, j in enumerate(others))
    out = np.empty(p_values.shape)
    for k, value in enumerate(p_values):
        points = np.empty((len(mesh), potentials.m))
        points[:, others] = mesh
        points[:, i] = value
        out[k] = np.min(spec.H(points) - other_sum)
    return out


def brute_force_oracle(marginals, spec: NonlinearitySpec, progress: bool = False):
    """
    Exhaustive minimum over permutation couplings of uniform marginals.

    Args:
        marginals : m uniform DiscreteMarginal with the same atom count n
        spec : cost H
        progress : show a progress bar

    Returns:
        (min_cost, argmin) with argmin the lexicographically smallest tuple of
        permutations (pi_2, ..., pi_m)
    """
    m = len(marginals)
    if m < 2:
        raise ValueError("At least two marginals are required")
    n = marginals[0].n
    if any(mu.n != n for mu in marginals):
        raise ValueError("All marginals must have the same number of atoms")
    if not all(mu.is_uniform for mu in marginals):
        raise ValueError("The oracle only handles uniform marginals")
    if n > ORACLE_MAX_ATOMS or m > ORACLE_MAX_MARGINALS:
        raise OracleBoundError(
            f"n = {n}, m = {m} exceeds the enumeration bound (n!)^(m-1) <= {ORACLE_MAX_ATOMS}!^{ORACLE_MAX_MARGINALS - 1}")

    perms = np.array(list(itertools.permutations(range(n))))
    last = marginals[-1].atoms[perms]
    best_value, best_perm = np.inf, None
    outer = itertools.product(range(len(perms)), repeat=m - 2)
    for combo in tqdm(outer, total=len(perms) ** (m - 2), disable=not progress, desc="oracle"):
        columns = [marginals[0].atoms] + [marginals[c + 1].atoms[perms[p]] for c, p in enumerate(combo)]
        points = np.empty((len(perms), n, m))
        points[..., : m - 1] = np.column_stack(columns)[None]
        points[..., m - 1] = last
        costs = spec.H(points).sum(axis=1) / n
        low = float(costs.min())
        tie = 1e-12 * (1.0 + abs(low))
        if low < best_value - tie or best_perm is None:
            j = int(np.flatnonzero(costs <= low + tie)[0])
            best_perm = tuple(tuple(int(x) for x in perms[p]) for p in combo) + (tuple(int(x) for x in perms[j]),)
        best_value = min(best_value, low)
    return best_value, best_perm


def support_distance(a: MonotoneCoupling, b: MonotoneCoupling):
    """
    Symmetric Hausdorff distance (max-norm) between two supports and the
    largest weight mismatch between nearest support points.
    """
    distances = np.max(np.abs(a.support[:, None, :] - b.support[None, :, :]), axis=-1)
    hausdorff = float(max(distances.min(axis=1).max(), distances.min(axis=0).max()))
    nearest = distances.argmin(axis=1)
    weight_gap = float(np.max(np.abs(a.weights - b.weights[nearest])))
    return hausdorff, weight_gap


def pushforward_coupling(field, orientation: Orientation) -> MonotoneCoupling:
    """(u_1, ..., u_m)# of the uniform mesh measure, ordered along the flipped coordinates."""
    points = field.points
    flipped = points * orientation.as_array()
    order = np.lexsort(flipped.T[::-1])
    return MonotoneCoupling(points[order], np.full(len(points), 1.0 / len(points)), orientation)


def verify_pushforward_optimality(field, spec: NonlinearitySpec, orientation: Orientation,
                                  resolution: int = DEFAULT_RESOLUTION, eps_dual: float = EPS_DUAL) -> dict:
    """
    Compare the pushforward of a monotone field with the monotone coupling of
    its marginals and certify the pushforward coupling.

    Raises:
        ValueError: when a component of the field is not monotone
    """
    from src.pde import check_H_monotone, check_monotone

    verdicts = check_monotone(field)
    bad = [v for v in verdicts if not v.monotone]
    if bad:
        raise ValueError(f"Component {bad[0].component} is not monotone (witness node {bad[0].witness})")

    h_monotone = check_H_monotone(field, spec).verdict == "H-monotone"
    marginals = [marginal_from_field(values) for values in field.components]
    pushforward = pushforward_coupling(field, orientation)
    monotone = solve_monotone(marginals, orientation)
    distance, weight_gap = support_distance(pushforward, monotone)
    coincides = distance <= 1e-10 and weight_gap <= WEIGHT_TOL

    potentials = build_potentials(pushforward, spec)
    certificate = certify(pushforward, potentials, spec, resolution, eps_dual)
    passed = certificate.passed and (coincides or not h_monotone)
    return {
        "h_monotone": h_monotone,
        "support_distance": distance,
        "weight_gap": weight_gap,
        "coincides": bool(coincides),
        "certificate": certificate.to_dict(),
        "passed": bool(passed),
    }


def uniform_marginal(atoms) -> DiscreteMarginal:
    """Uniform marginal on the given (distinct) atoms."""
    return marginal_from_field(atoms)


def permutation_coupling(marginals, permutations, orientation: Optional[Orientation] = None) -> MonotoneCoupling:
    """Coupling {(a_1k, a_2,pi_2(k), ...)} of uniform marginals."""
    n = marginals[0].n
    columns = [marginals[0].atoms] + [mu.atoms[np.asarray(pi)] for mu, pi in zip(marginals[1:], permutations)]
    orientation = orientation or Orientation.identity(len(marginals))
    return MonotoneCoupling(np.column_stack(columns), np.full(n, 1.0 / n), orientation)
