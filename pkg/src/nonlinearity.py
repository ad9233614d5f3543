"""
Nonlinearity Classifier

This module provides the representation of a non-linearity H: R^m -> R and the
three sign classifiers used to decide whether a gradient system can be
decoupled: orientable, compatible and submodular (after a sign change of
variables). Every verdict is certified on a finite SampleGrid of the domain box.

Evaluators are vectorized: they receive arrays of shape (..., m) and return
(...) for H, (..., m) for the gradient and (..., m, m) for the Hessian.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

EPS_SIGN = 1e-10
EPS_FOURPOINT = 1e-10
DEFAULT_PER_AXIS = 16
DEFAULT_RANDOM_COUNT = 4096
DEFAULT_SEED = 0
TENSOR_MAX_DIMENSION = 4
GRID_SLACK = 1e-12
FOURPOINT_FRACTIONS = (0.25, 0.5, 1.0)
HESSIAN_STEP = np.finfo(float).eps ** (1.0 / 3.0)


class EvaluationError(ValueError):
    """Raised when an evaluator fails or produces non-finite values."""

    def __init__(self, quantity: str, point, reason):
        self.point = np.asarray(point, dtype=float).tolist()
        super().__init__(f"{quantity} evaluation failed at p = {self.point}: {reason}")


class DegenerateSignError(ValueError):
    """Raised when a mixed derivative H_1i vanishes at the reference point."""


class ConsistencyError(RuntimeError):
    """Raised when the three classifiers disagree beyond degeneracy."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True, eq=False)
class NonlinearitySpec:
    """A non-linearity H with its derivatives and a box domain.

    Args:
        m : number of components
        eval_H : vectorized H
        eval_grad : vectorized gradient of H
        domain : (m, 2) array of interval endpoints
        eval_hess : vectorized Hessian; synthesized from eval_grad when None
        name : registry name used in reports
        params : registry parameters (for reports)
    """

    m: int
    eval_H: Callable[[np.ndarray], np.ndarray]
    eval_grad: Callable[[np.ndarray], np.ndarray]
    domain: np.ndarray
    eval_hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.m) < 2:
            raise ValueError(f"A non-linearity needs m >= 2 components, got {self.m}")
        domain = np.asarray(self.domain, dtype=float)
        if domain.shape != (self.m, 2):
            raise ValueError(f"Domain must have shape ({self.m}, 2), got {domain.shape}")
        if not np.all(np.isfinite(domain)) or np.any(domain[:, 1] <= domain[:, 0]):
            raise ValueError(f"Domain intervals must be finite with positive length: {domain.tolist()}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "domain", domain)

    @property
    def center(self) -> np.ndarray:
        return self.domain.mean(axis=1)

    @property
    def widths(self) -> np.ndarray:
        return self.domain[:, 1] - self.domain[:, 0]

    def H(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return _checked("H", p, lambda: self.eval_H(p), p.shape[:-1])

    def grad(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return _checked("gradient", p, lambda: self.eval_grad(p), p.shape)

    def hess(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.eval_hess is None:
            return _checked("Hessian", p, lambda: self._central_hessian(p), p.shape + (self.m,))
        return _checked("Hessian", p, lambda: self.eval_hess(p), p.shape + (self.m,))

    def _central_hessian(self, p: np.ndarray) -> np.ndarray:
        columns = []
        for j in range(self.m):
            step = HESSIAN_STEP * np.maximum(1.0, np.abs(p[..., j]))
            shift = np.zeros_like(p)
            shift[..., j] = step
            forward = np.asarray(self.eval_grad(p + shift), dtype=float)
            backward = np.asarray(self.eval_grad(p - shift), dtype=float)
            columns.append((forward - backward) / (2.0 * step[..., None]))
        hess = np.stack(columns, axis=-1)
        return 0.5 * (hess + np.swapaxes(hess, -1, -2))


def _checked(quantity: str, p: np.ndarray, evaluate, shape) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            values = np.asarray(evaluate(), dtype=float)
    except EvaluationError:
        raise
    except Exception as e:
        first = p.reshape(-1, p.shape[-1])[0] if p.size else p
        raise EvaluationError(quantity, first, e) from e
    if values.shape != tuple(shape):
        values = np.broadcast_to(values, shape).astype(float)
    bad = ~np.isfinite(values)
    if bad.any():
        lead = p.shape[:-1]
        if not lead:
            raise EvaluationError(quantity, p, "non-finite value")
        per_point = bad.reshape(lead + (-1,)).any(axis=-1)
        index = np.unravel_index(np.flatnonzero(per_point)[0], lead)
        raise EvaluationError(quantity, p[index], "non-finite value")
    return values


@dataclass(frozen=True)
class Orientation:
    """Sign vector theta in {-1, +1}^m."""

    theta: tuple

    def __post_init__(self):
        theta = tuple(int(t) for t in self.theta)
        if any(t not in (-1, 1) for t in theta):
            raise ValueError(f"Orientation entries must be -1 or +1, got {self.theta}")
        if len(theta) < 2:
            raise ValueError("Orientation needs at least two entries")
        object.__setattr__(self, "theta", theta)

    @property
    def m(self) -> int:
        return len(self.theta)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=float)

    @classmethod
    def identity(cls, m: int) -> "Orientation":
        return cls((1,) * m)

    @classmethod
    def parse(cls, text: str) -> "Orientation":
        """Parse a comma separated sign vector such as '1,-1'."""
        try:
            return cls(tuple(int(float(part)) for part in text.split(",")))
        except ValueError as e:
            raise ValueError(f"Cannot parse orientation '{text}': {e}") from e


@dataclass(frozen=True, eq=False)
class SampleGrid:
    """Finite point set used to certify sign conditions; inside domain when one is given."""

    points: np.ndarray
    strategy: str
    per_axis: Optional[int] = None
    seed: Optional[int] = None
    domain: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2 or len(points) == 0:
            raise ValueError(f"Grid points must be a non-empty (count, m) array, got shape {points.shape}")
        object.__setattr__(self, "points", points)
        if self.domain is None:
            return
        domain = np.asarray(self.domain, dtype=float)
        if domain.shape != (points.shape[1], 2):
            raise ValueError(f"Domain of shape {domain.shape} does not match {points.shape[1]}-dimensional points")
        slack = GRID_SLACK * np.maximum(1.0, np.abs(domain))
        outside = (points < domain[:, 0] - slack[:, 0]) | (points > domain[:, 1] + slack[:, 1])
        if outside.any():
            k = int(np.flatnonzero(outside.any(axis=1))[0])
            raise ValueError(f"Grid point {points[k].tolist()} lies outside the domain {domain.tolist()}")
        object.__setattr__(self, "domain", domain)

    @property
    def count(self) -> int:
        return int(len(self.points))

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "seed": self.seed, "count": self.count, "per_axis": self.per_axis}


def make_grid(domain, per_axis: Optional[int] = None, count: Optional[int] = None,
              seed: Optional[int] = None, strategy: Optional[str] = None) -> SampleGrid:
    """
    Build the default certification grid for a box.

    Args:
        domain : (m, 2) array of interval endpoints
        per_axis : points per axis for the tensor strategy
        count : number of points for the random strategy
        seed : seed for the random strategy
        strategy : 'tensor' or 'random'; defaults to tensor for m <= 4

    Returns:
        SampleGrid inside the closed box
    """
    domain = np.asarray(domain, dtype=float)
    m = domain.shape[0]
    if strategy is None:
        strategy = "tensor" if m <= TENSOR_MAX_DIMENSION else "random"

    if strategy == "tensor":
        per_axis = DEFAULT_PER_AXIS if per_axis is None else int(per_axis)
        if per_axis < 1:
            raise ValueError("per_axis must be positive")
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in domain]
        points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
        return SampleGrid(points, "tensor", per_axis=per_axis, domain=domain)

    if strategy == "random":
        count = DEFAULT_RANDOM_COUNT if count is None else int(count)
        if count < 1:
            raise ValueError("count must be positive")
        seed = DEFAULT_SEED if seed is None else int(seed)
        rng = np.random.default_rng(seed)
        points = domain[:, 0] + (domain[:, 1] - domain[:, 0]) * rng.random((count, m))
        return SampleGrid(points, "random", seed=seed, domain=domain)

    raise ValueError(f"Unknown grid strategy: {strategy}")


def reflect_grid(grid: SampleGrid, sigma) -> SampleGrid:
    """Map a grid through the change of variables q = sigma * p."""
    sigma = np.asarray(sigma, dtype=float)
    domain = None if grid.domain is None else np.sort(grid.domain * sigma[:, None], axis=1)
    return SampleGrid(grid.points * sigma, grid.strategy, per_axis=grid.per_axis, seed=grid.seed, domain=domain)


@dataclass(frozen=True)
class Witness:
    """A grid point certifying a failed (or degenerate) sign condition.

    Indices are 1-based component indices.
    """

    point: tuple
    indices: tuple
    value: float
    kind: str = "sign"
    increments: Optional[tuple] = None

    def to_dict(self) -> dict:
        data = {"point": list(self.point), "pair_or_triple": list(self.indices),
                "value": self.value, "kind": self.kind}
        if self.increments is not None:
            data["increments"] = list(self.increments)
        return data


def _witness(point, indices, value, kind="sign", increments=None) -> Witness:
    return Witness(tuple(float(x) for x in point), tuple(int(i) + 1 for i in indices), float(value), kind,
                   None if increments is None else tuple(float(x) for x in increments))


@dataclass
class Classification:
    """Outcome of one classifier."""

    test: str
    verdict: str
    grid: SampleGrid
    theta: Optional[Orientation] = None
    witnesses: list = field(default_factory=list)
    vacuous: bool = False

    @property
    def passed(self) -> bool:
        return self.verdict == self.test

    @property
    def degenerate(self) -> bool:
        return self.verdict == "degenerate"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "theta": None if self.theta is None else list(self.theta.theta),
            "witnesses": [w.to_dict() for w in self.witnesses],
            "grid": self.grid.to_dict(),
            "vacuous": self.vacuous,
        }


def _require_points(grid: SampleGrid, spec: NonlinearitySpec):
    if grid.count == 0:
        raise ValueError("Sample grid is empty")
    if grid.points.shape[1] != spec.m:
        raise ValueError(f"Grid dimension {grid.points.shape[1]} does not match m = {spec.m}")


def _first_pair(mask: np.ndarray):
    i, j = np.argwhere(np.triu(mask, 1))[0]
    return int(i), int(j)


def check_orientable(spec: NonlinearitySpec, grid: SampleGrid, eps_sign: float = EPS_SIGN) -> Classification:
    """
    Decide whether theta_i theta_j H_ij < 0 holds on the grid for some sign vector.

    The candidate theta is read off the first Hessian row at the box center
    (theta_1 = +1, theta_i = +1 where H_1i < 0, -1 where H_1i > 0).

    Args:
        spec : non-linearity
        grid : certification grid
        eps_sign : strict sign margin

    Returns:
        Classification with verdict orientable, not_orientable or degenerate
    """
    _require_points(grid, spec)
    m = spec.m
    center = spec.center
    first_row = spec.hess(center)[0]
    small = [j for j in range(1, m) if abs(first_row[j]) <= eps_sign]
    if small:
        j = small[0]
        logging.warning(f"{spec.name}: H_1{j + 1} vanishes at the box center, orientability is degenerate")
        return Classification("orientable", "degenerate", grid,
                              witnesses=[_witness(center, (0, j), first_row[j], kind="degenerate")])

    theta = np.ones(m)
    theta[1:] = np.where(first_row[1:] < 0, 1.0, -1.0)

    hess = spec.hess(grid.points)
    signed = theta[:, None] * theta[None, :] * hess
    off_diagonal = ~np.eye(m, dtype=bool)
    bad = (signed >= -eps_sign) & off_diagonal
    bad_points = np.flatnonzero(bad.any(axis=(1, 2)))
    if bad_points.size:
        k = bad_points[0]
        i, j = _first_pair(bad[k])
        logging.info(f"{spec.name}: not orientable, theta {theta.astype(int).tolist()} fails at grid point {k}")
        return Classification("orientable", "not_orientable", grid,
                               witnesses=[_witness(grid.points[k], (i, j), hess[k, i, j])])

    orientation = Orientation(tuple(theta.astype(int)))
    logging.info(f"{spec.name}: orientable with theta {list(orientation.theta)} on {grid.count} points")
    return Classification("orientable", "orientable", grid, theta=orientation)


def check_compatible(spec: NonlinearitySpec, grid: SampleGrid, eps_sign: float = EPS_SIGN) -> Classification:
    """
    Decide whether H_ij (H_kj)^-1 H_ki < 0 for all distinct i, j, k on the grid.

    For m = 2 there are no distinct triples and the verdict is vacuous.
    """
    _require_points(grid, spec)
    if spec.m == 2:
        return Classification("compatible", "compatible", grid, vacuous=True)

    hess = spec.hess(grid.points)
    triples = list(itertools.permutations(range(spec.m), 3))
    num = np.stack([hess[:, i, j] * hess[:, k, i] for i, j, k in triples], axis=1)
    den = np.stack([hess[:, k, j] for i, j, k in triples], axis=1)

    degenerate = np.abs(den) <= eps_sign
    if degenerate.any():
        k, t = np.argwhere(degenerate)[0]
        i, j, kk = triples[t]
        return Classification("compatible", "degenerate", grid,
                              witnesses=[_witness(grid.points[k], (i, j, kk), den[k, t], kind="degenerate")])

    products = num / den
    violated = products >= -eps_sign
    if violated.any():
        k, t = np.argwhere(violated)[0]
        return Classification("compatible", "not_compatible", grid,
                              witnesses=[_witness(grid.points[k], triples[t], products[k, t])])
    return Classification("compatible", "compatible", grid)


def _four_point_violation(spec: NonlinearitySpec, grid: SampleGrid, eps_fourpoint: float) -> Optional[Witness]:
    points = grid.points
    widths = spec.widths
    upper = spec.domain[:, 1]
    found = None
    for i, j in itertools.combinations(range(spec.m), 2):
        for fh, fk in itertools.product(FOURPOINT_FRACTIONS, repeat=2):
            h = fh * widths[i] / 4.0
            k = fk * widths[j] / 4.0
            inside = (points[:, i] + h <= upper[i]) & (points[:, j] + k <= upper[j])
            index = np.flatnonzero(inside)
            if found is not None:
                index = index[index < found[0]]
            if not index.size:
                continue
            p = points[index]
            ph = p.copy()
            ph[:, i] += h
            pk = p.copy()
            pk[:, j] += k
            phk = ph.copy()
            phk[:, j] += k
            diff = spec.H(phk) + spec.H(p) - spec.H(ph) - spec.H(pk)
            bad = np.flatnonzero(diff > eps_fourpoint)
            if bad.size:
                b = bad[0]
                found = (index[b], _witness(p[b], (i, j), diff[b], kind="fourpoint", increments=(h, k)))
    return None if found is None else found[1]


def check_submodular(spec: NonlinearitySpec, grid: SampleGrid, eps_sign: float = EPS_SIGN,
                     eps_fourpoint: float = EPS_FOURPOINT) -> Classification:
    """
    Decide whether H_ij < 0 for all i != j on the grid, and run the discrete
    four-point test H(p+he_i+ke_j) + H(p) - H(p+he_i) - H(p+ke_j) <= eps.
    """
    _require_points(grid, spec)
    hess = spec.hess(grid.points)
    off_diagonal = ~np.eye(spec.m, dtype=bool)
    bad = (hess >= -eps_sign) & off_diagonal
    witnesses = []
    bad_points = np.flatnonzero(bad.any(axis=(1, 2)))
    if bad_points.size:
        k = bad_points[0]
        i, j = _first_pair(bad[k])
        witnesses.append(_witness(grid.points[k], (i, j), hess[k, i, j]))

    four_point = _four_point_violation(spec, grid, eps_fourpoint)
    if four_point is not None:
        witnesses.append(four_point)

    verdict = "not_submodular" if witnesses else "submodular"
    return Classification("submodular", verdict, grid, witnesses=witnesses)


def flip_to_submodular(spec: NonlinearitySpec, eps_sign: float = EPS_SIGN):
    """
    Change variables q_i = sigma_i p_i so that an orientable H becomes submodular.

    Returns:
        (sigma, flipped spec) with sigma_1 = +1, sigma_i = +1 where H_1i < 0 and
        -1 where H_1i > 0 at the box center
    """
    center = spec.center
    first_row = spec.hess(center)[0]
    for j in range(1, spec.m):
        if abs(first_row[j]) <= eps_sign:
            raise DegenerateSignError(
                f"H_1{j + 1} = {first_row[j]:.3e} vanishes at the box center {center.tolist()}; "
                f"shrink the domain to a region where the mixed derivatives keep their sign")
    sigma = np.ones(spec.m)
    sigma[1:] = np.where(first_row[1:] < 0, 1.0, -1.0)
    return tuple(int(s) for s in sigma), flipped_spec(spec, sigma)


def flipped_spec(spec: NonlinearitySpec, sigma) -> NonlinearitySpec:
    """H(sigma * q) on the reflected box."""
    sigma = np.asarray(sigma, dtype=float)
    outer = sigma[:, None] * sigma[None, :]
    domain = np.sort(spec.domain * sigma[:, None], axis=1)
    suffix = "" if np.all(sigma > 0) else "[flipped]"
    return NonlinearitySpec(
        m=spec.m,
        eval_H=lambda q: spec.H(np.asarray(q, dtype=float) * sigma),
        eval_grad=lambda q: sigma * spec.grad(np.asarray(q, dtype=float) * sigma),
        eval_hess=lambda q: outer * spec.hess(np.asarray(q, dtype=float) * sigma),
        domain=domain,
        name=f"{spec.name}{suffix}",
        params=dict(spec.params, sigma=sigma.astype(int).tolist()),
    )


@dataclass
class EquivalenceReport:
    """The three classifications side by side."""

    orientable: Classification
    compatible: Classification
    submodular: Classification
    sigma: Optional[tuple]

    @property
    def degenerate(self) -> bool:
        return any(c.degenerate for c in (self.orientable, self.compatible, self.submodular))

    @property
    def consistent(self) -> bool:
        decisive = [c.passed for c in (self.orientable, self.compatible, self.submodular)
                    if not c.vacuous and not c.degenerate]
        return len(set(decisive)) <= 1

    @property
    def verdict(self) -> str:
        if self.orientable.degenerate:
            return "degenerate"
        return self.orientable.verdict

    def to_dict(self) -> dict:
        witnesses = [w.to_dict() for c in (self.orientable, self.compatible, self.submodular) for w in c.witnesses]
        return {
            "verdict": self.verdict,
            "theta": None if self.orientable.theta is None else list(self.orientable.theta.theta),
            "witnesses": witnesses,
            "grid": self.orientable.grid.to_dict(),
            "sigma": None if self.sigma is None else list(self.sigma),
            "consistent": self.consistent,
            "degenerate": self.degenerate,
            "classifications": {
                "orientable": self.orientable.to_dict(),
                "compatible": self.compatible.to_dict(),
                "submodular_after_flip": self.submodular.to_dict(),
            },
        }


def verify_equivalence(spec: NonlinearitySpec, grid: SampleGrid, eps_sign: float = EPS_SIGN) -> EquivalenceReport:
    """
    Run the three classifiers independently and check that they agree.

    Raises:
        ConsistencyError: when decisive verdicts disagree (carries the report)
    """
    orientable = check_orientable(spec, grid, eps_sign)
    compatible = check_compatible(spec, grid, eps_sign)
    try:
        sigma, flipped = flip_to_submodular(spec, eps_sign)
        submodular = check_submodular(flipped, reflect_grid(grid, sigma), eps_sign)
    except DegenerateSignError as e:
        logging.warning(f"{spec.name}: {e}")
        sigma = None
        submodular = Classification("submodular", "degenerate", grid, witnesses=list(orientable.witnesses))

    report = EquivalenceReport(orientable, compatible, submodular, sigma)
    if not report.consistent:
        raise ConsistencyError(
            f"{spec.name}: classifiers disagree (orientable={orientable.verdict}, "
            f"compatible={compatible.verdict}, submodular={submodular.verdict})", report)
    logging.info(f"{spec.name}: classifiers agree on '{report.verdict}'")
    return report


def validate_spec(spec: NonlinearitySpec, grid: SampleGrid, rel_tol: float = 1e-8) -> dict:
    """
    Check the evaluator invariants of a spec on a grid.

    The Hessian must be symmetric and the gradient must agree with central
    differences of H with second-order error (checked at two step sizes).

    Returns:
        dict with the worst asymmetry, the finite-difference errors and a passed flag
    """
    _require_points(grid, spec)
    points = grid.points
    hess = spec.hess(points)
    asymmetry = float(np.max(np.abs(hess - np.swapaxes(hess, -1, -2)) / (1.0 + np.abs(hess))))

    grad = spec.grad(points)
    errors = []
    for scale in (1e-3, 5e-4):
        fd = np.empty_like(grad)
        for j in range(spec.m):
            step = scale * np.maximum(1.0, np.abs(points[:, j]))
            shift = np.zeros_like(points)
            shift[:, j] = step
            fd[:, j] = (spec.H(points + shift) - spec.H(points - shift)) / (2.0 * step)
        errors.append(float(np.max(np.abs(fd - grad))))
    floor = 1e-7 * (1.0 + float(np.max(np.abs(grad))))
    gradient_ok = errors[1] <= 0.3 * errors[0] + floor

    return {
        "max_asymmetry": asymmetry,
        "gradient_errors": errors,
        "passed": bool(asymmetry <= rel_tol and gradient_ok),
    }
