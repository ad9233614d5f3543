"""
Rectangular Rearrangement

This module provides gridded fields on a box Omega x [0, 1], their one-dimensional
H-monotone rectangular rearrangement (each component replaced by the quantile
profile of its distribution, increasing or decreasing with its boundary data),
the energy E(u) = int 1/2 sum |grad u_i|^2 + H(u), the check that rearranging
does not increase either term, and a discrete extended Hardy-Littlewood check.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd

from src.mmot1d import build_potentials, certify, coupling_cost, marginal_from_field, solve_monotone
from src.nonlinearity import NonlinearitySpec, Orientation, check_submodular, make_grid
from src.pde import FieldBundle, Mesh1D

EPS_REARR = 1e-6
BOUNDARY_TOL = 1e-12
HL_GRID_PER_AXIS = 8


def trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights of a 1D grid."""
    axis = np.asarray(axis, dtype=float)
    steps = np.diff(axis)
    weights = np.zeros_like(axis)
    weights[:-1] += 0.5 * steps
    weights[1:] += 0.5 * steps
    return weights


@dataclass(frozen=True, eq=False)
class BoxField:
    """
    Nodal values u_i(x', x_N) on base_axes x [0, 1].

    values has shape (m, n_1[, n_2], n_vertical); the vertical grid is the
    uniform grid of n_vertical nodes on [0, 1].
    """

    base_axes: tuple
    values: np.ndarray

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.base_axes)
        if len(axes) not in (1, 2):
            raise ValueError(f"The base domain must have dimension 1 or 2, got {len(axes)}")
        for axis in axes:
            if axis.ndim != 1 or len(axis) < 2 or np.any(np.diff(axis) <= 0):
                raise ValueError("Base axes must be strictly increasing with at least 2 nodes")
        values = np.asarray(self.values, dtype=float)
        expected = tuple(len(a) for a in axes)
        if values.ndim != len(axes) + 2 or values.shape[1:-1] != expected or values.shape[-1] < 3:
            raise ValueError(f"Values of shape {values.shape} do not match base grid {expected} "
                             f"with at least 3 vertical nodes")
        if not np.all(np.isfinite(values)):
            raise ValueError("Field values must be finite")
        object.__setattr__(self, "base_axes", axes)
        object.__setattr__(self, "values", values)
        self._check_boundary()
        self._check_monotone()

    def _check_boundary(self):
        for i, u in enumerate(self.values, start=1):
            for name, face in (("bottom", u[..., 0]), ("top", u[..., -1])):
                if np.ptp(face) > BOUNDARY_TOL:
                    raise ValueError(f"Component {i}: {name} boundary is not constant in x' (spread {np.ptp(face):.3e})")

    def _check_monotone(self):
        for i, u in enumerate(self.values, start=1):
            a, b = u.reshape(-1, u.shape[-1])[0, [0, -1]]
            if a == b:
                raise ValueError(f"Component {i}: degenerate vertical range, a = b = {a}")
            steps = np.sign(b - a) * np.diff(u, axis=-1)
            if np.any(steps <= 0):
                raise ValueError(f"Component {i} is not strictly monotone in x_N along every vertical line")

    @property
    def m(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_vertical(self) -> int:
        return int(self.values.shape[-1])

    @property
    def vertical(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_vertical)

    @property
    def base_volume(self) -> float:
        return float(np.prod([a[-1] - a[0] for a in self.base_axes]))

    @property
    def boundary(self) -> tuple:
        flat = self.values.reshape(self.m, -1, self.n_vertical)
        return tuple((float(u[0, 0]), float(u[0, -1])) for u in flat)

    @property
    def directions(self) -> np.ndarray:
        return np.array([np.sign(b - a) for a, b in self.boundary])

    @property
    def axes(self) -> tuple:
        return self.base_axes + (self.vertical,)

    def weights(self) -> np.ndarray:
        """Tensor trapezoid weights on the full grid (total = box volume)."""
        total = np.ones(())
        for axis in self.axes:
            total = np.multiply.outer(total, trapezoid_weights(axis))
        return total

    def is_one_dimensional(self, tol: float = BOUNDARY_TOL) -> bool:
        flat = self.values.reshape(self.m, -1, self.n_vertical)
        return bool(np.all(np.ptp(flat, axis=1) <= tol))

    def vertical_lines(self):
        mesh = Mesh1D(0.0, 1.0, self.n_vertical)
        flat = self.values.reshape(self.m, -1, self.n_vertical)
        for k in range(flat.shape[1]):
            yield FieldBundle(mesh, flat[:, k, :])

    def to_frame(self) -> pd.DataFrame:
        grids = np.meshgrid(*self.axes, indexing="ij")
        columns = {f"x{d + 1}": g.ravel() for d, g in enumerate(grids[:-1])}
        columns["xN"] = grids[-1].ravel()
        for i in range(self.m):
            columns[f"u{i + 1}"] = self.values[i].ravel()
        return pd.DataFrame(columns)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "BoxField":
        """Read columns x1[,x2], xN, u1, ..., um in row-major order (xN fastest)."""
        base_names = [c for c in ("x1", "x2") if c in frame.columns]
        value_names = [c for c in frame.columns if c.startswith("u")]
        expected = base_names + ["xN"] + [f"u{i + 1}" for i in range(len(value_names))]
        if not base_names or not value_names or list(frame.columns) != expected:
            raise ValueError(f"Expected columns {','.join(expected)}, got {list(frame.columns)}")
        axes = [np.unique(frame[c].to_numpy(dtype=float)) for c in base_names + ["xN"]]
        shape = tuple(len(a) for a in axes)
        if int(np.prod(shape)) != len(frame):
            raise ValueError("Rows do not form a full tensor grid")
        grids = np.meshgrid(*axes, indexing="ij")
        for name, grid in zip(base_names + ["xN"], grids):
            if not np.array_equal(frame[name].to_numpy(dtype=float), grid.ravel()):
                raise ValueError("Rows must be in row-major order with xN varying fastest")
        vertical = axes[-1]
        if np.max(np.abs(vertical - np.linspace(0.0, 1.0, len(vertical)))) > 1e-12:
            raise ValueError("The vertical grid must be uniform on [0, 1]")
        values = np.stack([frame[c].to_numpy(dtype=float).reshape(shape) for c in expected[len(base_names) + 1:]])
        return cls(tuple(axes[:-1]), values)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    potential: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.potential

    def to_dict(self) -> dict:
        return {"dirichlet": self.dirichlet, "potential": self.potential, "total": self.total}


def lift(profile: FieldBundle, base_axes=((0.0, 1.0),)) -> BoxField:
    """The x'-constant box field with the given vertical profile."""
    if profile.mesh.x_lo != 0.0 or profile.mesh.x_hi != 1.0:
        raise ValueError("A lifted profile must live on [0, 1]")
    axes = tuple(np.asarray(a, dtype=float) for a in base_axes)
    shape = (profile.m,) + tuple(len(a) for a in axes) + (profile.mesh.n,)
    values = np.broadcast_to(profile.values.reshape((profile.m,) + (1,) * len(axes) + (-1,)), shape)
    return BoxField(axes, values.copy())


def _dirichlet(values: np.ndarray, axes) -> float:
    """1/2 sum_i int |grad u_i|^2 with forward differences averaged over each cell."""
    d = len(axes)
    steps = [np.diff(a) for a in axes]
    volume = np.ones(())
    for s in steps:
        volume = np.multiply.outer(volume, s)
    total = 0.0
    for u in values:
        squared = np.zeros(volume.shape)
        for axis in range(d):
            shape = [1] * d
            shape[axis] = -1
            slope = np.diff(u, axis=axis) / steps[axis].reshape(shape)
            for other in range(d):
                if other != axis:
                    lo = [slice(None)] * d
                    hi = [slice(None)] * d
                    lo[other] = slice(None, -1)
                    hi[other] = slice(1, None)
                    slope = 0.5 * (slope[tuple(lo)] + slope[tuple(hi)])
            squared += slope ** 2
        total += float(np.sum(squared * volume))
    return 0.5 * total


def energy(field, spec: NonlinearitySpec, base_axes=((0.0, 1.0),)) -> EnergyBreakdown:
    """
    E(u) = int 1/2 sum_i |grad u_i|^2 + H(u) on the box grid.

    A 1D FieldBundle on [0, 1] is lifted over base_axes first.
    """
    if isinstance(field, FieldBundle):
        field = lift(field, base_axes)
    if field.m != spec.m:
        raise ValueError(f"Field has {field.m} components, spec has m = {spec.m}")
    points = np.moveaxis(field.values, 0, -1)
    potential = float(np.sum(field.weights() * spec.H(points)))
    return EnergyBreakdown(_dirichlet(field.values, field.axes), potential)


def _marginals(field: BoxField):
    weights = field.weights().ravel()
    return [marginal_from_field(u.ravel(), weights) for u in field.values]


def rectangular_rearrangement(field: BoxField) -> FieldBundle:
    """
    One-dimensional profile u_bar on the vertical grid with the same
    distribution as u under the grid measure.

    u_bar_i(x_N) is the left-continuous quantile of mu_i at level x_N when
    a_i < b_i, and at level 1 - x_N when a_i > b_i.
    """
    levels = field.vertical
    columns = []
    for mu, direction in zip(_marginals(field), field.directions):
        columns.append(mu.quantile(levels if direction > 0 else 1.0 - levels))
    return FieldBundle(Mesh1D(0.0, 1.0, field.n_vertical), np.vstack(columns))


def boundary_consistency(field: BoxField, spec: NonlinearitySpec) -> dict:
    """Sign of H_ij(u)(b_i - a_i)(b_j - a_j) on the field values; all negative is consistent."""
    delta = np.array([b - a for a, b in field.boundary])
    points = np.moveaxis(field.values, 0, -1).reshape(-1, field.m)
    hess = spec.hess(points)
    products = hess * delta[None, :, None] * delta[None, None, :]
    bad = (products >= 0) & ~np.eye(field.m, dtype=bool)[None]
    violating = np.flatnonzero(bad.any(axis=(1, 2)))
    if violating.size:
        k = int(violating[0])
        i, j = np.argwhere(bad[k])[0]
        return {"consistent": False, "witness": points[k].tolist(), "pair": [int(i) + 1, int(j) + 1]}
    return {"consistent": True, "witness": None, "pair": None}


def _orientation(field: BoxField) -> Orientation:
    return Orientation(tuple(int(d) for d in field.directions))


def rearranged_energy(field: BoxField, spec: NonlinearitySpec, profile: Optional[FieldBundle] = None):
    """
    Energy of the rearrangement.

    The H-term is the box volume times the cost of the comonotone coupling of
    the weighted marginals, which is int H(u_bar) for the quantile profile; the
    Dirichlet term is that of the sampled profile lifted to the box.

    Returns:
        (profile, EnergyBreakdown, coupling)
    """
    if profile is None:
        profile = rectangular_rearrangement(field)
    coupling = solve_monotone(_marginals(field), _orientation(field))
    volume = field.base_volume
    dirichlet = _dirichlet(lift(profile, field.base_axes).values, field.axes)
    return profile, EnergyBreakdown(dirichlet, volume * coupling_cost(coupling, spec)), coupling


def equimeasurability_gap(field: BoxField, profile: FieldBundle) -> float:
    """Kolmogorov distance between mu_i and u_bar_i under the vertical trapezoid measure, max over i."""
    vertical = trapezoid_weights(profile.mesh.nodes)
    gaps = []
    for mu, u_bar in zip(_marginals(field), profile.values):
        nu = marginal_from_field(u_bar, vertical)
        atoms = np.union1d(mu.atoms, nu.atoms)
        cdf_mu = np.concatenate(([0.0], mu.cumulative))[np.searchsorted(mu.atoms, atoms, side="right")]
        cdf_nu = np.concatenate(([0.0], nu.cumulative))[np.searchsorted(nu.atoms, atoms, side="right")]
        gaps.append(float(np.max(np.abs(cdf_mu - cdf_nu))))
    return max(gaps)


def verify_energy_decrease(field: BoxField, spec: NonlinearitySpec, eps_rearr: float = EPS_REARR,
                           certify_coupling: bool = True) -> dict:
    """
    Compare E(u) with E(u_bar) term by term.

    The potential decrease is asserted only when the boundary data are
    consistent with the sign pattern of H; for already 1D inputs both terms
    must be unchanged.
    """
    consistency = boundary_consistency(field, spec)
    before = energy(field, spec)
    profile, after, coupling = rearranged_energy(field, spec)
    dirichlet_decrease = before.dirichlet - after.dirichlet
    potential_decrease = before.potential - after.potential
    one_dimensional = field.is_one_dimensional()

    passed = dirichlet_decrease >= -eps_rearr
    if consistency["consistent"]:
        passed = passed and potential_decrease >= -eps_rearr
    else:
        logging.warning(f"Boundary data are not consistent with {spec.name} at {consistency['witness']}; "
                        f"the potential term is reported only")
    if one_dimensional:
        passed = passed and abs(dirichlet_decrease) <= eps_rearr and abs(potential_decrease) <= eps_rearr

    report = {
        "energy_before": before.to_dict(),
        "energy_after": after.to_dict(),
        "dirichlet_decrease": dirichlet_decrease,
        "potential_decrease": potential_decrease,
        "one_dimensional": one_dimensional,
        "consistency": consistency,
        "equimeasurability_gap": equimeasurability_gap(field, profile),
        "tolerance": eps_rearr,
        "passed": bool(passed),
    }
    if certify_coupling and consistency["consistent"]:
        report["certificate"] = certify(coupling, build_potentials(coupling, spec), spec).to_dict()
    logging.info(f"Energy {before.total:.10g} -> {after.total:.10g} "
                 f"(dirichlet {dirichlet_decrease:+.3e}, potential {potential_decrease:+.3e})")
    return report


def hl_inequality_check(vectors, spec: NonlinearitySpec, require_submodular: bool = True,
                        eps_rearr: float = EPS_REARR) -> dict:
    """
    Discrete extended Hardy-Littlewood inequality
    sum_k H(u_1*(k), ..., u_m*(k)) <= sum_k H(u_1(k), ..., u_m(k)),
    with * the decreasing sort of each vector.

    Raises:
        ValueError: when H is not submodular on the bounding box of the vectors
            and require_submodular is set
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if vectors.shape[0] != spec.m:
        raise ValueError(f"Expected {spec.m} vectors, got {vectors.shape[0]}")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("Vectors must be finite")
    lo, hi = vectors.min(axis=1), vectors.max(axis=1)
    flat = hi <= lo
    box = np.column_stack([np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi)])
    classification = check_submodular(replace(spec, domain=box), make_grid(box, per_axis=HL_GRID_PER_AXIS))
    if require_submodular and not classification.passed:
        raise ValueError(f"{spec.name} is not submodular on the bounding box of the vectors; "
                         f"the inequality can fail ({classification.witnesses[0].to_dict()})")

    decreasing = -np.sort(-vectors, axis=1)
    sorted_sum = float(np.sum(spec.H(decreasing.T)))
    original_sum = float(np.sum(spec.H(vectors.T)))
    return {
        "sorted_sum": sorted_sum,
        "original_sum": original_sum,
        "gap": sorted_sum - original_sum,
        "submodular": classification.passed,
        "tolerance": eps_rearr,
        "passed": bool(sorted_sum <= original_sum + eps_rearr),
    }


def tilted_box_field(m: int = 2, seed: int = 0, n_base: int = 64, n_vertical: int = 128, tau=None,
                     frequencies=None, profiles=None, signs=None) -> BoxField:
    """
    Seeded monotone field u_i = g_i(Z + tau_i sin(2 pi k_i X) Z (1 - Z)) on [0, 1] x [0, 1].

    Args:
        m : number of components
        seed : random seed for the tilts and the default profiles
        tau : optional tilt amplitudes (default: random in [0.05, 0.15] with random sign)
        frequencies : optional integer frequencies k_i (default: random in {1, 2})
        profiles : optional increasing functions g_i (default: tanh(a_i (z - c_i)),
            a_i in [2, 6], c_i in [0.3, 0.7])
        signs : optional +1/-1 per component; -1 reverses the profile

    Returns:
        BoxField with constant boundary slices
    """
    rng = np.random.default_rng(seed)
    if tau is None:
        tau = rng.uniform(0.05, 0.15, size=m) * rng.choice([-1.0, 1.0], size=m)
    if frequencies is None:
        frequencies = rng.integers(1, 3, size=m)
    if profiles is None:
        slopes = rng.uniform(2.0, 6.0, size=m)
        centers = rng.uniform(0.3, 0.7, size=m)
        profiles = [lambda z, a=a, c=c: np.tanh(a * (z - c)) for a, c in zip(slopes, centers)]
    signs = np.ones(m) if signs is None else np.asarray(signs, dtype=float)

    x = np.linspace(0.0, 1.0, n_base)
    z = np.linspace(0.0, 1.0, n_vertical)
    X, Z = np.meshgrid(x, z, indexing="ij")
    values = []
    for i in range(m):
        level = Z + tau[i] * np.sin(2.0 * np.pi * frequencies[i] * X) * Z * (1.0 - Z)
        values.append(signs[i] * profiles[i](level))
    return BoxField((x,), np.stack(values))
