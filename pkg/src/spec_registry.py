"""
Spec Registry

This module provides the built-in non-linearities and the reader for plain-text
spec configs (one `key = value` pair per line, `#` starts a comment).

Built-in names:
    ac-quadratic        sum_{i<j} (p_i - p_j)^2 + sum W(p_i)
    ac-logsumexp        m log[(1/m) sum exp(W(p_i))]
    quadratic-coupling  p_1^2 p_2^2 / 2
    pairwise-product    c sum_{i<j} p_i p_j
    quadratic-form      p^T A p with seeded negative off-diagonal A
    zero                H = 0
with W(p) = (p^2 - 1)^2 / 4 the Allen-Cahn potential.
"""

import logging
import os

import numpy as np
from scipy.special import logsumexp, softmax

from src.nonlinearity import NonlinearitySpec

CONFIG_KEYS = {"name", "m", "coefficient", "seed"}


class ConfigError(ValueError):
    """Raised for malformed or unknown spec configs."""


def allen_cahn_potential(p):
    p = np.asarray(p, dtype=float)
    return 0.25 * (p ** 2 - 1.0) ** 2


def allen_cahn_derivative(p):
    p = np.asarray(p, dtype=float)
    return p * (p ** 2 - 1.0)


def allen_cahn_second_derivative(p):
    p = np.asarray(p, dtype=float)
    return 3.0 * p ** 2 - 1.0


def _box(box, m, default):
    if box is None:
        box = [default] * m
    return np.asarray(box, dtype=float)


def ac_quadratic(m: int = 2, box=None) -> NonlinearitySpec:
    """Allen-Cahn potentials coupled by a quadratic interaction (H_ij = -2)."""
    m = int(m)

    def H(p):
        diff = p[..., :, None] - p[..., None, :]
        return 0.5 * np.sum(diff ** 2, axis=(-1, -2)) + np.sum(allen_cahn_potential(p), axis=-1)

    def grad(p):
        diff = p[..., :, None] - p[..., None, :]
        return 2.0 * np.sum(diff, axis=-1) + allen_cahn_derivative(p)

    def hess(p):
        out = np.full(p.shape + (m,), -2.0)
        idx = np.arange(m)
        out[..., idx, idx] = 2.0 * (m - 1) + allen_cahn_second_derivative(p)
        return out

    return NonlinearitySpec(m, H, grad, _box(box, m, (-1.0, 1.0)), hess, name="ac-quadratic", params={"m": m})


def ac_logsumexp(m: int = 2, box=None) -> NonlinearitySpec:
    """The log-sum-exp mean of Allen-Cahn potentials."""
    m = int(m)
    log_m = np.log(m)

    def H(p):
        return m * (logsumexp(allen_cahn_potential(p), axis=-1) - log_m)

    def grad(p):
        weights = softmax(allen_cahn_potential(p), axis=-1)
        return m * weights * allen_cahn_derivative(p)

    def hess(p):
        weights = softmax(allen_cahn_potential(p), axis=-1)
        slope = allen_cahn_derivative(p)
        ws = weights * slope
        out = -m * ws[..., :, None] * ws[..., None, :]
        idx = np.arange(m)
        out[..., idx, idx] += m * weights * (slope ** 2 + allen_cahn_second_derivative(p))
        return out

    return NonlinearitySpec(m, H, grad, _box(box, m, (-1.0, 1.0)), hess, name="ac-logsumexp", params={"m": m})


def quadratic_coupling(box=None) -> NonlinearitySpec:
    """H = p_1^2 p_2^2 / 2, the coupled system u_1'' = u_1 u_2^2, u_2'' = u_1^2 u_2."""

    def H(p):
        return 0.5 * p[..., 0] ** 2 * p[..., 1] ** 2

    def grad(p):
        return np.stack([p[..., 0] * p[..., 1] ** 2, p[..., 0] ** 2 * p[..., 1]], axis=-1)

    def hess(p):
        p1, p2 = p[..., 0], p[..., 1]
        cross = 2.0 * p1 * p2
        return np.stack([np.stack([p2 ** 2, cross], axis=-1), np.stack([cross, p1 ** 2], axis=-1)], axis=-2)

    return NonlinearitySpec(2, H, grad, _box(box, 2, (0.001, 4.0)), hess, name="quadratic-coupling", params={"m": 2})


def pairwise_product(m: int = 3, coefficient: float = 1.0, box=None) -> NonlinearitySpec:
    """c times the sum of all pairwise products."""
    m = int(m)
    c = float(coefficient)

    def H(p):
        total = np.sum(p, axis=-1)
        return 0.5 * c * (total ** 2 - np.sum(p ** 2, axis=-1))

    def grad(p):
        return c * (np.sum(p, axis=-1, keepdims=True) - p)

    def hess(p):
        return np.broadcast_to(c * (1.0 - np.eye(m)), p.shape + (m,)).copy()

    return NonlinearitySpec(m, H, grad, _box(box, m, (0.0, 1.0)), hess, name="pairwise-product",
                            params={"m": m, "coefficient": c})


def negative_quadratic_matrix(m: int, seed: int = 0) -> np.ndarray:
    """Seeded symmetric matrix with off-diagonal entries in [-2, -0.5]."""
    rng = np.random.default_rng(seed)
    A = -rng.uniform(0.5, 2.0, size=(m, m))
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, rng.uniform(0.0, 1.0, size=m))
    return A


def quadratic_form(m: int = 3, seed: int = 0, box=None) -> NonlinearitySpec:
    """H = p^T A p for a seeded A with negative off-diagonal entries."""
    m = int(m)
    A = negative_quadratic_matrix(m, seed)

    def H(p):
        return np.einsum("...i,ij,...j->...", p, A, p)

    def grad(p):
        return 2.0 * p @ A

    def hess(p):
        return np.broadcast_to(2.0 * A, p.shape + (m,)).copy()

    return NonlinearitySpec(m, H, grad, _box(box, m, (-1.0, 1.0)), hess, name="quadratic-form",
                            params={"m": m, "seed": int(seed)})


def zero(m: int = 2, box=None) -> NonlinearitySpec:
    """H = 0 (the Laplace system)."""
    m = int(m)
    return NonlinearitySpec(m, lambda p: np.zeros(p.shape[:-1]), lambda p: np.zeros(p.shape),
                            _box(box, m, (-1.0, 1.0)), lambda p: np.zeros(p.shape + (m,)),
                            name="zero", params={"m": m})


REGISTRY = {
    "ac-quadratic": ac_quadratic,
    "ac-logsumexp": ac_logsumexp,
    "quadratic-coupling": lambda m=2, box=None: _fixed_two(quadratic_coupling, m, box),
    "pairwise-product": pairwise_product,
    "quadratic-form": quadratic_form,
    "zero": zero,
}


def _fixed_two(builder, m, box):
    if int(m) != 2:
        raise ConfigError(f"quadratic-coupling has exactly two components, got m = {m}")
    return builder(box=box)


def build_spec(name: str, m: int = 2, box=None, **params) -> NonlinearitySpec:
    """
    Build a registered spec.

    Args:
        name : registry name
        m : number of components
        box : optional (m, 2) domain box
        params : builder specific parameters (coefficient, seed)

    Returns:
        NonlinearitySpec
    """
    if name not in REGISTRY:
        raise ConfigError(f"Unknown spec '{name}'. Available: {', '.join(sorted(REGISTRY))}")
    try:
        return REGISTRY[name](m=m, box=box, **params)
    except TypeError as e:
        raise ConfigError(f"Invalid parameters for spec '{name}': {e}") from e
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Invalid spec '{name}': {e}") from e


def parse_spec_config(text: str, source: str = "<config>") -> dict:
    """Parse `key = value` lines into a settings dict (values left as strings)."""
    settings = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        if key in settings:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        settings[key] = value
    return settings


def spec_from_settings(settings: dict, source: str = "<config>") -> NonlinearitySpec:
    """Turn parsed config settings into a spec."""
    if "name" not in settings:
        raise ConfigError(f"{source}: missing required key 'name'")
    try:
        m = int(settings.get("m", 2))
    except ValueError as e:
        raise ConfigError(f"{source}: m must be an integer") from e

    box_keys = {f"box_{i}_{end}" for i in range(1, m + 1) for end in ("min", "max")}
    unknown = set(settings) - CONFIG_KEYS - box_keys
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")

    box = None
    present = box_keys & set(settings)
    if present:
        if present != box_keys:
            raise ConfigError(f"{source}: box needs all of {sorted(box_keys)}, missing {sorted(box_keys - present)}")
        try:
            box = [(float(settings[f"box_{i}_min"]), float(settings[f"box_{i}_max"])) for i in range(1, m + 1)]
        except ValueError as e:
            raise ConfigError(f"{source}: box bounds must be numbers") from e

    params = {}
    try:
        if "coefficient" in settings:
            params["coefficient"] = float(settings["coefficient"])
        if "seed" in settings:
            params["seed"] = int(settings["seed"])
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from e

    return build_spec(settings["name"], m=m, box=box, **params)


def load_spec_config(path: str) -> NonlinearitySpec:
    """
    Load a spec config file.

    Args:
        path : path of the key = value file

    Returns:
        NonlinearitySpec

    Raises:
        ConfigError: on a missing file or malformed content
    """
    if not os.path.isfile(path):
        raise ConfigError(f"Spec config not found: {path}")
    try:
        with open(path, "r") as f:
            text = f.read()
    except (PermissionError, IOError) as e:
        raise ConfigError(f"Cannot read spec config {path}: {e}") from e
    spec = spec_from_settings(parse_spec_config(text, path), path)
    logging.info(f"Loaded spec '{spec.name}' (m = {spec.m}) from {path}")
    return spec
