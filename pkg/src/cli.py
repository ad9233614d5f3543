"""
Command Line Interface

This module provides the subcommands of the decoupling toolkit:

    analyze    classify a non-linearity (orientable / compatible / submodular)
    mmot       monotone multi-marginal coupling of CSV marginals with its certificate
    solve      solve u'' = grad H(u) on [-L, L]
    decouple   build and verify decoupling potentials of a monotone field
    rearrange  rectangular rearrangement of a box field and its energy decrease
    examples   run one of the worked examples end to end

Every command writes a JSON report into --out. Exit codes: 0 when all checks
pass, 1 when a mathematical check fails, 2 on configuration or IO errors.
"""

import argparse
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np

from src import report_io
from src.decouple import (EPS_DECOUPLE, build_decoupling, modica_check, verify_decoupled_pde,
                          verify_global_inequality, verify_on_solution_identity)
from src.examples import CASES, run_case
from src.mmot1d import (EPS_DUAL, ORACLE_MAX_ATOMS, ORACLE_MAX_MARGINALS, brute_force_oracle, build_potentials,
                        certify, coupling_cost, solve_monotone)
from src.nonlinearity import (EPS_SIGN, ConsistencyError, EvaluationError, NonlinearitySpec, Orientation,
                              check_orientable, make_grid, verify_equivalence)
from src.pde import Mesh1D, check_H_monotone, check_monotone, monotone_window, solve_system_bvp
from src.rearrange import EPS_REARR, rectangular_rearrangement, tilted_box_field, verify_energy_decrease
from src.spec_registry import REGISTRY, ConfigError, build_spec, load_spec_config

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
ORACLE_TOL = 1e-12
DEFAULT_OUTPUT_DIR = "results"


@dataclass
class RunConfig:
    """Validated settings of one command."""

    command: str
    spec: Optional[str] = None
    spec_config: Optional[str] = None
    m: int = 2
    L: Optional[float] = None
    n: Optional[int] = None
    resolution: int = 33
    seed: Optional[int] = None
    out: str = DEFAULT_OUTPUT_DIR
    tol_sign: float = EPS_SIGN
    tol_dual: float = EPS_DUAL
    tol_decouple: float = EPS_DECOUPLE
    tol_rearr: float = EPS_REARR
    marginals: List[str] = field(default_factory=list)
    orientation: Optional[str] = None
    boundary: Optional[str] = None
    input: Optional[str] = None
    case: Optional[str] = None
    signs: Optional[str] = None
    scale: float = 1.0
    swap: bool = False

    def validate(self):
        for name in ("tol_sign", "tol_dual", "tol_decouple", "tol_rearr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"--{name.replace('_', '-')} must be positive")
        if self.m < 2:
            raise ConfigError("--m must be at least 2")
        if self.n is not None and self.n < 3:
            raise ConfigError("--n must be at least 3")
        if self.L is not None and not self.L > 0:
            raise ConfigError("--L must be positive")
        if self.resolution < 2:
            raise ConfigError("--resolution must be at least 2")
        if not self.scale > 0:
            raise ConfigError("--scale must be positive")
        if self.seed is not None and self.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        if os.path.exists(self.out) and not os.path.isdir(self.out):
            raise ConfigError(f"Output path exists and is not a directory: {self.out}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def setup_random_seed(seed: Optional[int] = None) -> int:
    """Seed in use for this run; one is generated and logged when none is given.

    Args:
        seed : Random seed value. If None, a random seed will be generated.

    Returns:
        int: The random seed used.
    """
    if seed is not None:
        logging.info(f"Set random seed to {seed}")
        return int(seed)
    seed = int(np.random.default_rng().integers(0, 2 ** 32 - 1))
    logging.info(f"Using generated random seed: {seed}")
    return seed


def build_parser() -> argparse.ArgumentParser:
    """Parser with the common flags on every subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", type=str, default=None, choices=sorted(REGISTRY),
                        help="Built-in non-linearity")
    common.add_argument("--spec-config", type=str, default=None,
                        help="Path to a key = value spec config (overrides --spec)")
    common.add_argument("--m", type=int, default=2, help="Number of components (default: 2)")
    common.add_argument("--L", type=float, default=None, help="Half-length of the interval [-L, L]")
    common.add_argument("--n", type=int, default=None, help="Number of mesh nodes")
    common.add_argument("--resolution", type=int, default=33,
                        help="Points per axis of the certification grids (default: 33)")
    common.add_argument("--seed", type=int, default=None, help="Random seed for reproducible results")
    common.add_argument("--out", type=str, default=DEFAULT_OUTPUT_DIR, help="Directory to save output files")
    common.add_argument("--tol-sign", type=float, default=EPS_SIGN, help="Strict sign margin")
    common.add_argument("--tol-dual", type=float, default=EPS_DUAL, help="Duality certificate tolerance")
    common.add_argument("--tol-decouple", type=float, default=EPS_DECOUPLE, help="Decoupling tolerance")
    common.add_argument("--tol-rearr", type=float, default=EPS_REARR, help="Rearrangement energy tolerance")

    parser = argparse.ArgumentParser(description="Decoupling of gradient systems through one-dimensional "
                                                 "multi-marginal transport")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("analyze", parents=[common], help="Classify a non-linearity")

    mmot = commands.add_parser("mmot", parents=[common], help="Monotone coupling of CSV marginals")
    mmot.add_argument("--marginals", nargs="+", required=True, help="CSV files with columns atom, weight")
    mmot.add_argument("--orientation", type=str, default=None,
                      help="Sign vector such as '1,-1' (default: read off H)")

    for name, text in (("solve", "Solve the coupled boundary value problem"),
                       ("decouple", "Build and verify decoupling potentials")):
        sub = commands.add_parser(name, parents=[common], help=text)
        sub.add_argument("--boundary", type=str, default=None, help="Dirichlet data 'a1:b1,a2:b2,...'")
        if name == "decouple":
            sub.add_argument("--input", type=str, default=None, help="Field CSV with columns x, u1, ..., um")

    rearrange = commands.add_parser("rearrange", parents=[common], help="Rectangular rearrangement")
    rearrange.add_argument("--input", type=str, default=None,
                           help="Box field CSV (default: a seeded tilted field)")

    examples = commands.add_parser("examples", parents=[common], help="Run a worked example")
    examples.add_argument("--case", type=str, required=True, choices=CASES)
    examples.add_argument("--signs", type=str, default=None, help="Sign pattern for ac-logsumexp, e.g. '1,-1'")
    examples.add_argument("--scale", type=float, default=1.0,
                          help="quadratic-coupling: rescale u -> lambda u(lambda x) (default: 1)")
    examples.add_argument("--swap", action="store_true", help="quadratic-coupling: exchange the boundary data")
    return parser


def config_from_args(args) -> RunConfig:
    values = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    return RunConfig(**values).validate()


def resolve_spec(config: RunConfig, m: Optional[int] = None) -> NonlinearitySpec:
    if config.spec_config:
        return load_spec_config(config.spec_config)
    if config.spec:
        return build_spec(config.spec, m=m or config.m)
    raise ConfigError("One of --spec or --spec-config is required")


def parse_boundary(text: str, m: int):
    """Parse 'a1:b1,a2:b2' into m pairs."""
    try:
        pairs = [tuple(float(v) for v in part.split(":")) for part in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"Cannot parse boundary '{text}': {e}") from e
    if len(pairs) != m or any(len(p) != 2 for p in pairs):
        raise ConfigError(f"Boundary '{text}' must give {m} pairs a:b")
    return pairs


def default_mesh_and_boundary(config: RunConfig, spec: NonlinearitySpec):
    quadratic = spec.name == "quadratic-coupling"
    L = config.L or (12.0 if quadratic else 10.0)
    n = config.n or (601 if quadratic else 401)
    if config.boundary:
        boundary = parse_boundary(config.boundary, spec.m)
    elif quadratic:
        boundary = [(0.01, 3.0), (3.0, 0.01)]
    elif spec.name.startswith("ac-"):
        end = float(np.tanh(L / np.sqrt(2.0)))
        boundary = [(-end, end)] * spec.m
    else:
        raise ConfigError(f"--boundary is required for spec '{spec.name}'")
    return Mesh1D.symmetric(L, n), boundary


def spec_summary(spec: NonlinearitySpec) -> dict:
    return {"name": spec.name, "m": spec.m, "params": spec.params, "domain": spec.domain.tolist()}


def _finish(config: RunConfig, checks: dict, failed_stage: Optional[str], spec=None, outputs=None,
            extra: Optional[dict] = None) -> int:
    passed = failed_stage is None
    report = {
        "command": config.command,
        "seed": config.seed,
        "passed": passed,
        "failed_stage": failed_stage,
        "checks": checks,
        "config": config.to_dict(),
        "spec": None if spec is None else spec_summary(spec),
        "outputs": outputs or [],
    }
    report.update(extra or {})
    if report_io.save_report(report, config.out, f"{config.command}_report.json") is None:
        return EXIT_CONFIG_ERROR
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def _first_failure(checks: dict) -> Optional[str]:
    return next((name for name, check in checks.items() if not check.get("passed", True)), None)


def cmd_analyze(config: RunConfig) -> int:
    spec = resolve_spec(config)
    grid = make_grid(spec.domain, seed=config.seed)
    try:
        report = verify_equivalence(spec, grid, config.tol_sign)
    except ConsistencyError as e:
        logging.error(str(e))
        checks = {"classification": dict(e.report.to_dict() if e.report else {}, passed=False)}
        return _finish(config, checks, "classification", spec)
    checks = {"classification": dict(report.to_dict(), passed=report.consistent)}
    logging.info(f"{spec.name}: verdict {report.verdict}")
    return _finish(config, checks, _first_failure(checks), spec)


def _orientation_for(marginals, spec: NonlinearitySpec, config: RunConfig):
    if config.orientation:
        try:
            orientation = Orientation.parse(config.orientation)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if orientation.m != spec.m:
            raise ConfigError(f"--orientation has {orientation.m} entries, expected {spec.m}")
        return orientation, {"source": "flag", "theta": list(orientation.theta), "passed": True}
    lows = np.array([mu.atoms[0] for mu in marginals])
    highs = np.array([mu.atoms[-1] for mu in marginals])
    flat = highs <= lows
    box = np.column_stack([np.where(flat, lows - 0.5, lows), np.where(flat, highs + 0.5, highs)])
    classification = check_orientable(replace(spec, domain=box), make_grid(box, seed=config.seed), config.tol_sign)
    check = dict(classification.to_dict(), source="classification", passed=classification.passed)
    return classification.theta, check


def cmd_mmot(config: RunConfig) -> int:
    marginals = [report_io.load_marginal_csv(path) for path in config.marginals]
    if any(mu is None for mu in marginals):
        return EXIT_CONFIG_ERROR
    if len(marginals) < 2:
        raise ConfigError("At least two marginals are required")
    spec = resolve_spec(config, m=len(marginals))
    if spec.m != len(marginals):
        raise ConfigError(f"Spec has m = {spec.m} but {len(marginals)} marginals were given")

    checks = {}
    orientation, checks["orientation"] = _orientation_for(marginals, spec, config)
    if orientation is None:
        return _finish(config, checks, "orientation", spec)

    coupling = solve_monotone(marginals, orientation)
    potentials = build_potentials(coupling, spec)
    certificate = certify(coupling, potentials, spec, config.resolution, config.tol_dual)
    checks["certificate"] = certificate.to_dict()
    checks["certificate"]["passed"] = certificate.passed

    n = marginals[0].n
    if (all(mu.is_uniform and mu.n == n for mu in marginals)
            and n <= ORACLE_MAX_ATOMS and len(marginals) <= ORACLE_MAX_MARGINALS):
        oracle_min, argmin = brute_force_oracle(marginals, spec)
        cost = coupling_cost(coupling, spec)
        checks["oracle"] = {"coupling_cost": cost, "oracle_min": oracle_min, "difference": cost - oracle_min,
                            "argmin": [list(p) for p in argmin], "passed": cost - oracle_min <= ORACLE_TOL}

    outputs = report_io.save_frames(dict({"coupling": coupling.to_frame()}, **potentials.frames()), config.out,
                                    prefix="mmot_")
    return _finish(config, checks, _first_failure(checks), spec, outputs)


def _solve(config: RunConfig, spec: NonlinearitySpec, checks: dict):
    mesh, boundary = default_mesh_and_boundary(config, spec)
    try:
        solution, solve_report = solve_system_bvp(spec, mesh, boundary)
    except ValueError as e:
        if isinstance(e, EvaluationError):
            raise
        raise ConfigError(str(e)) from e
    checks["solve"] = dict(solve_report.to_dict(), passed=solve_report.converged)
    return solution


def cmd_solve(config: RunConfig) -> int:
    spec = resolve_spec(config)
    checks = {}
    solution = _solve(config, spec, checks)
    checks["monotone"] = {"components": [v.to_dict() for v in check_monotone(solution)], "passed": True}
    try:
        checks["h_monotone"] = dict(check_H_monotone(solution, spec).to_dict(), passed=True)
    except ValueError as e:
        checks["h_monotone"] = {"verdict": None, "reason": str(e), "passed": True}
    path = report_io.get_output_path(config.out, "solve_profile.csv")
    outputs = [path] if report_io.save_field_csv(solution, path) else []
    return _finish(config, checks, _first_failure(checks), spec, outputs)


def cmd_decouple(config: RunConfig) -> int:
    spec = resolve_spec(config)
    checks = {}
    if config.input:
        solution = report_io.load_field_csv(config.input)
        if solution is None:
            return EXIT_CONFIG_ERROR
        if solution.m != spec.m:
            raise ConfigError(f"Field has {solution.m} components, spec has m = {spec.m}")
    else:
        solution = _solve(config, spec, checks)
        if not checks["solve"]["passed"]:
            return _finish(config, checks, "solve", spec)
        try:
            start, stop = monotone_window(solution)
        except ValueError as e:
            checks["monotone"] = {"reason": str(e), "passed": False}
            return _finish(config, checks, "monotone", spec)
        if (start, stop) != (0, solution.mesh.n - 1):
            logging.info(f"Decoupling on the monotone window of nodes {start}..{stop}")
            solution = solution.restrict(start, stop)
        checks["window"] = {"start": start, "stop": stop, "passed": True}

    try:
        potentials = build_decoupling(solution, spec)
    except ValueError as e:
        checks["monotone"] = {"reason": str(e), "passed": False}
        return _finish(config, checks, "monotone", spec)

    checks["on_solution_identity"] = verify_on_solution_identity(solution, potentials, spec, config.tol_decouple)
    try:
        checks["global_inequality"] = verify_global_inequality(solution, potentials, spec, config.resolution,
                                                               config.tol_decouple)
    except ValueError as e:
        checks["global_inequality"] = {"reason": str(e), "passed": False}
    checks["decoupled_pde"] = verify_decoupled_pde(solution, potentials, config.tol_decouple)
    modica = modica_check(solution, potentials, spec, resolution=config.resolution, eps_decouple=config.tol_decouple)
    checks["modica"] = dict(modica.to_dict(), passed=modica.passed is not False, verdict=modica.passed)

    frames = dict(potentials.frames(), profile=solution.to_frame(), modica=modica.to_frame(solution.mesh.nodes))
    outputs = report_io.save_frames(frames, config.out, prefix="decouple_")
    manifest = dict(potentials.manifest(), verification={k: v.get("passed") for k, v in checks.items()})
    manifest_path = report_io.get_output_path(config.out, "decouple_manifest.json")
    if report_io.save_json(manifest, manifest_path):
        outputs.append(manifest_path)
    return _finish(config, checks, _first_failure(checks), spec, outputs)


def cmd_rearrange(config: RunConfig) -> int:
    if config.input:
        box_field = report_io.load_box_field_csv(config.input)
        if box_field is None:
            return EXIT_CONFIG_ERROR
    else:
        box_field = tilted_box_field(config.m, seed=config.seed)
        logging.info(f"Generated a tilted box field with seed {config.seed}")
    spec = resolve_spec(config, m=box_field.m)
    if spec.m != box_field.m:
        raise ConfigError(f"Box field has {box_field.m} components, spec has m = {spec.m}")
    report = verify_energy_decrease(box_field, spec, config.tol_rearr)
    checks = {"energy_decrease": report}
    if "certificate" in report:
        checks["certificate"] = dict(report["certificate"], passed=report["certificate"]["pass"])
    profile = rectangular_rearrangement(box_field)
    path = report_io.get_output_path(config.out, "rearrange_profile.csv")
    outputs = [path] if report_io.save_field_csv(profile, path) else []
    return _finish(config, checks, _first_failure(checks), spec, outputs)


def cmd_examples(config: RunConfig) -> int:
    signs = None
    if config.signs:
        try:
            signs = tuple(int(s) for s in config.signs.split(","))
        except ValueError as e:
            raise ConfigError(f"Cannot parse --signs '{config.signs}'") from e
        if len(signs) != config.m:
            raise ConfigError(f"--signs needs {config.m} entries")
    if config.case == "quadratic-coupling" and config.m != 2:
        raise ConfigError("quadratic-coupling has exactly two components")
    try:
        run = run_case(config.case, config.m, config.L, config.n, signs, config.resolution, config.scale, config.swap)
    except ValueError as e:
        if isinstance(e, EvaluationError):
            raise
        raise ConfigError(str(e)) from e
    outputs = report_io.save_frames(run.frames, config.out, prefix=f"{config.case}_")
    summary = run.to_dict()
    return _finish(config, summary["checks"], summary["failed_stage"], run.case.spec, outputs,
                   {"case": run.case.name, "notes": summary["notes"]})


COMMANDS = {
    "analyze": cmd_analyze,
    "mmot": cmd_mmot,
    "solve": cmd_solve,
    "decouple": cmd_decouple,
    "rearrange": cmd_rearrange,
    "examples": cmd_examples,
}


def main(argv=None) -> int:
    """
    Parse arguments, run one command and return its exit code.

    Args:
        argv : argument list (defaults to sys.argv[1:])

    Returns:
        0 when all checks pass, 1 when a check fails, 2 on configuration or IO errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG_ERROR
    try:
        config = config_from_args(args)
        config.seed = setup_random_seed(config.seed)
        return COMMANDS[config.command](config)
    except ConfigError as e:
        logging.error(str(e))
        return EXIT_CONFIG_ERROR
    except EvaluationError as e:
        logging.error(f"Evaluation failed: {e}")
        return EXIT_CHECK_FAILED
    except (FileNotFoundError, PermissionError, IOError) as e:
        logging.error(f"File error: {e}")
        return EXIT_CONFIG_ERROR
