"""
Subcommand handlers.

Each handler takes the experiment config and an output directory, writes
its CSVs and report, and returns the artifact paths. `run` adds the
manifest; `audit_manifest` repeats a recorded run and compares checksums.
"""

import logging
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from models.band import MeasureFamily
from models.coefficients import Barrier, CoupledProblem, GrowthBoundedFunction
from models.grids import TimeGrid
from services.approx import audit_ladder, ladder_schedule, monotone_ladder, require_audit
from services.catalog import (
    BUILTIN_COEFFICIENTS,
    builtin_coefficient,
    builtin_problem,
    builtin_transform,
)
from services.errors import AuditError, ConfigurationError
from services.fsde import (
    envelope_forward,
    gronwall_bound,
    solve_forward_monotone,
)
from services.gcore import scenario_expectation, sublinear_expectation
from services.glattice import build_lattice, lattice_frame, solve_gheat
from services.gpaths import (
    bang_bang_family,
    bdg_diagnostic,
    ito_identity_defect,
    paths_frame,
    qv_bound_check,
    simulate_paths,
)
from services.rbsde import (
    a_bound_ratio,
    complementarity_sum,
    envelope_pair,
    martingale_defect,
    solve_rbsde_lattice,
    solve_rbsde_penalized,
    solution_frame,
)
from services.rfbsde_iter import InnerConfig, apply_terminal_transform, residual_check, solve_rfbgsde
from utils.config import COEFFICIENT_ROLES, ExperimentConfig, config_from_dict, save_config
from utils.export import compare_checksums, read_manifest, write_csv, write_manifest, write_report
from utils.expressions import coefficient_from_expression


logger = logging.getLogger(__name__)


SUBCOMMANDS = ("gheat", "paths", "infconv", "forward", "rbsde", "rfbsde", "audit")
MAX_PATH_ROWS = 100
DEFAULT_PHI = "x*x"
CONFIG_ECHO = "experiment.yaml"


def resolve_coefficient(role: str, entry: Any) -> GrowthBoundedFunction:
    """
    Turn a config entry into a coefficient for `role`.

    An entry is a built-in name, a number, an expression string (growth
    taken as 1) or a mapping with `expr` or `builtin` plus optional
    `growth`, `lipschitz` and `monotone`.
    """
    allowed = COEFFICIENT_ROLES[role]
    if isinstance(entry, (int, float)):
        return GrowthBoundedFunction.constant(float(entry), allowed[:1], name=f"{role}={entry}")
    if isinstance(entry, str):
        entry = {"builtin": entry} if entry in BUILTIN_COEFFICIENTS else {"expr": entry}
    if not isinstance(entry, dict):
        raise ConfigurationError(f"Coefficient '{role}' must be a name, number, expression or mapping")

    if "builtin" in entry:
        coeff = builtin_coefficient(entry["builtin"])
        outside = [v for v in coeff.variables if v not in allowed]
        if outside:
            raise ConfigurationError(f"Built-in '{entry['builtin']}' uses {outside}, not allowed for '{role}'")
        return coeff
    if "expr" not in entry:
        raise ConfigurationError(f"Coefficient '{role}' needs 'expr' or 'builtin'")
    if "growth" not in entry:
        logger.warning(f"Coefficient '{role}' declares no growth constant, assuming 1")
    return coefficient_from_expression(
        str(entry["expr"]), allowed, growth=entry.get("growth", 1.0), lipschitz=entry.get("lipschitz"),
        monotone=entry.get("monotone"), name=f"{role}:{entry['expr']}",
    )


def _state_function(coeff: GrowthBoundedFunction, horizon: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda b: coeff(horizon, b)


def _barrier(entry: Any) -> Barrier:
    if isinstance(entry, (int, float)):
        return Barrier.constant(float(entry))
    if not isinstance(entry, dict) or "ceiling" not in entry:
        raise ConfigurationError("A non-constant barrier needs a mapping with 'expr' and 'ceiling'")
    coeff = resolve_coefficient("barrier", entry)
    return Barrier(func=lambda t, b: coeff(t, b), ceiling=float(entry["ceiling"]), name=coeff.label)


def problem_from_config(config: ExperimentConfig) -> CoupledProblem:
    """Built-in problem with the config's coefficient overrides applied."""
    problem = builtin_problem(config.problem.name)
    entries = config.coefficients
    forward_roles = {role: resolve_coefficient(role, entries[role]) for role in ("b", "h", "sigma") if role in entries}
    backward_roles = {}
    if "f" in entries:
        backward_roles["driver_f"] = resolve_coefficient("f", entries["f"])
    if "g" in entries:
        backward_roles["driver_g"] = resolve_coefficient("g", entries["g"])
    if "terminal" in entries:
        terminal = resolve_coefficient("terminal", entries["terminal"])
        backward_roles["terminal"] = _state_function(terminal, config.grid.horizon)
    if "barrier" in entries:
        backward_roles["barrier"] = _barrier(entries["barrier"])
    if not forward_roles and not backward_roles:
        return problem

    forward = replace(problem.forward, **forward_roles)
    backward = replace(problem.backward, **backward_roles)
    growth = max([problem.growth] + [c.growth for c in forward_roles.values()]
                 + [c.growth for c in backward_roles.values() if isinstance(c, GrowthBoundedFunction)])
    forward = replace(forward, growth=max(forward.growth, growth))
    envelope = max(problem.envelope, growth)
    return replace(problem, forward=forward, backward=replace(backward, growth=envelope),
                   growth=growth, envelope=envelope, name=f"{problem.name}+overrides")


def _problem_with_transform(config: ExperimentConfig) -> CoupledProblem:
    problem = problem_from_config(config)
    if config.problem.transform:
        grid = build_lattice(config.band.to_band(), config.grid.lattice_config())
        problem = apply_terminal_transform(problem, builtin_transform(config.problem.transform), grid)
    return problem


def _inner(config: ExperimentConfig) -> InnerConfig:
    return InnerConfig(n_levels=config.tolerances.inner_levels,
                       slack_multiplier=config.tolerances.slack_multiplier)


def _bundle(config: ExperimentConfig):
    band = config.band.to_band()
    grid = TimeGrid.uniform(config.grid.horizon, config.grid.steps)
    controls = bang_bang_family(grid, band, config.family.depth)
    return simulate_paths(controls, config.family.samples, config.family.seed, band=band)


def run_gheat(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    """u(0, x) = Ê[phi(x + B_T)] and the lower value -Ê[-phi] on the lattice."""
    band = config.band.to_band()
    phi = resolve_coefficient("phi", config.coefficients.get("phi", DEFAULT_PHI))
    upper = solve_gheat(lambda x: phi(config.grid.horizon, x), band, config.grid.lattice_config())
    lower = solve_gheat(lambda x: -phi(config.grid.horizon, x), band, config.grid.lattice_config())
    frame = lattice_frame(upper.grid, {"u": upper.values, "u_lower": -lower.values})
    csv = write_csv(frame, out_dir / "gheat.csv", "gheat")
    report = write_report([
        f"phi: {phi.label}",
        f"root_value: {upper.root_value:.12g}",
        f"lower_root_value: {-lower.root_value:.12g}",
        f"stability_ratio: {upper.grid.stability_ratio:.6f}",
    ], out_dir / "gheat_report.txt")
    return [csv, report]


def run_paths(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    """Simulated family paths plus quadratic-variation and Itô diagnostics."""
    band = config.band.to_band()
    bundle = _bundle(config)
    eta = resolve_coefficient("eta", config.coefficients.get("eta", 1.0))
    eta_values = eta(bundle.grid.times, bundle.B)

    defect = ito_identity_defect(bundle)
    mean_defect, defect_err, _ = scenario_expectation(defect)
    qv = qv_bound_check(eta_values, bundle, band)
    bdg = bdg_diagnostic(lambda times, B: eta(times, B), bundle.controls, band, config.tolerances.bdg_p,
                         config.family.samples, config.family.seed)
    terminal = MeasureFamily.from_sample_matrix(bundle.B[..., -1], label="terminal B")
    second_moment = sublinear_expectation(np.square, terminal)

    csv = write_csv(paths_frame(bundle, max_samples=MAX_PATH_ROWS), out_dir / "paths.csv", "paths")
    report = write_report([
        f"scenarios: {' '.join(c.label for c in bundle.controls)}",
        f"samples: {bundle.n_samples}",
        f"ito_defect_mean: {mean_defect:.12g}",
        f"ito_defect_stderr: {defect_err:.12g}",
        f"qv_bound: {qv.lower:.12g} <= {qv.middle:.12g} <= {qv.upper:.12g} ({'holds' if qv.holds else 'fails'})",
        f"bdg_p: {bdg.p:g}",
        f"bdg: {bdg.lhs:.12g} <= {bdg.mid:.12g} <= {bdg.rhs:.12g}",
        f"bdg_ordering: {'holds' if bdg.ordering_holds() else 'fails'}",
        f"bdg_lower_ratio: {bdg.lower_ratio:.12g}",
        f"terminal_second_moment: {second_moment:.12g}",
    ], out_dir / "paths_report.txt")
    return [csv, report]


def run_infconv(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    """Ladder values on a query range and the ladder audit."""
    settings = config.infconv
    base = builtin_coefficient(settings.coefficient)
    if base.arity != 1:
        raise ConfigurationError(f"infconv demo needs a one-argument coefficient, '{base.label}' has {base.arity}")
    levels = ladder_schedule(base.growth, settings.levels)
    points = np.linspace(settings.lo, settings.hi, settings.points)[:, None]
    values = monotone_ladder(base, levels, points)

    columns = {"x": points[:, 0], "f": base.evaluate(points)}
    for n, row in zip(levels, values):
        columns[f"f_n{n:g}"] = row
    csv = write_csv(pd.DataFrame(columns), out_dir / "infconv.csv", "infconv")

    audit = audit_ladder(base, levels, points)
    report = write_report([
        f"coefficient: {base.label}",
        f"levels: {' '.join(f'{n:g}' for n in levels)}",
        f"growth_excess: {audit.growth_excess:.6e}",
        f"monotone_violation: {audit.monotone_violation:.6e}",
        f"domination_violation: {audit.domination_violation:.6e}",
        f"lipschitz_ratios: {' '.join(f'{r:.6g}' for r in audit.lipschitz_ratios)}",
        f"top_gap: {audit.top_gap:.6e}",
        f"passed: {audit.passed()}",
    ], out_dir / "infconv_report.txt")
    require_audit(audit)
    return [csv, report]


def run_forward(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    """
    Forward solve through the Lipschitz ladder.

    On the lattice a y-dependent drift is driven by the lower start Y0 of
    the problem; the scenario backend needs y-free coefficients.
    """
    problem = _problem_with_transform(config)
    spec = problem.forward
    band = config.band.to_band()
    options = dict(n_levels=config.tolerances.inner_levels, tol=config.tolerances.tol * 0.1,
                   slack_multiplier=config.tolerances.slack_multiplier)

    if config.backend == "scenario":
        if spec.needs_y:
            raise ConfigurationError("The scenario forward solve needs coefficients free of y")
        bundle = _bundle(config)
        X, ladder = solve_forward_monotone(spec, bundle, **options)
        frame = paths_frame(bundle, max_samples=MAX_PATH_ROWS)
        frame["X"] = X[:, :frame["sample"].max() + 1, :].reshape(-1)
        bound = gronwall_bound(spec, bundle.grid.horizon, float(np.max(bundle.qv[:, -1])), 0.0,
                               float(np.max(np.sum(np.abs(bundle.dB), axis=-1))))
        lines = [f"sup_abs_X: {float(np.max(np.abs(X))):.12g}", f"gronwall_bound: {bound:.12g}"]
    else:
        grid = build_lattice(band, config.grid.lattice_config())
        lower, upper = envelope_pair(problem.backward, band, None, grid=grid)
        X, ladder = solve_forward_monotone(spec, grid, lower.Y if spec.needs_y else None, **options)
        S = envelope_forward(problem.envelope, upper.Y, spec.sigma, spec.x0, grid)
        frame = lattice_frame(grid, {"X": X, "S": S})
        mask = grid.reachable_mask()
        lines = [
            f"root_X_T_range: {float(np.min(X[-1][mask[-1]])):.12g} {float(np.max(X[-1][mask[-1]])):.12g}",
            f"envelope_margin: {float(np.min(np.where(mask, S - X, np.inf))):.12g}",
        ]

    csv = write_csv(frame, out_dir / "forward.csv", f"forward-{config.backend}")
    report = write_report([
        f"problem: {problem.name}",
        f"backend: {config.backend}",
        f"ladder_levels_used: {ladder.n_levels_used}",
        f"ladder_levels: {' '.join(f'{n:g}' for n in ladder.levels)}",
        f"ladder_converged: {ladder.converged}",
        *lines,
    ], out_dir / "forward_report.txt")
    return [csv, report]


def run_rbsde(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    """Reflected backward solve with X = B on either backend."""
    problem = _problem_with_transform(config)
    spec = problem.backward
    band = config.band.to_band()

    if config.backend == "scenario":
        bundle = _bundle(config)
        solution = solve_rbsde_penalized(spec, bundle, config.tolerances.penalty)
        frame = paths_frame(bundle, max_samples=MAX_PATH_ROWS)
        n_rows = frame["sample"].max() + 1
        for name, values in (("Y", solution.Y), ("Z", solution.Z), ("dA", solution.dA)):
            frame[name] = values[:, :n_rows, :].reshape(-1)
        lines = [f"rank_deficient_steps: {len(solution.rank_deficient_steps)}"]
    else:
        level = None
        if spec.driver_f.lipschitz is None or spec.driver_g.lipschitz is None:
            level = ladder_schedule(problem.growth, config.tolerances.inner_levels)[-1]
        solution = solve_rbsde_lattice(spec, band, config.grid.lattice_config(), ladder_level=level)
        frame = solution_frame(solution)
        lines = [
            f"ladder_level: {level}",
            f"complementarity_sum: {complementarity_sum(solution):.12g}",
        ]

    defect = martingale_defect(solution)
    csv = write_csv(frame, out_dir / "rbsde.csv", f"rbsde-{config.backend}")
    report = write_report([
        f"problem: {problem.name}",
        f"backend: {config.backend}",
        f"y0: {solution.y0:.12g}",
        *defect.as_lines(),
        f"a_bound_ratio: {a_bound_ratio(solution, problem.growth):.12g}",
        f"floor_contact_fraction: {float(np.mean(solution.floor_contact[solution.mask()])):.12g}",
        *lines,
    ], out_dir / "rbsde_report.txt")
    return [csv, report]


def run_rfbsde(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    """Coupled reflected solve by monotone iteration, with residuals."""
    if config.backend != "lattice":
        raise ConfigurationError("rfbsde runs on the lattice backend only")
    problem = _problem_with_transform(config)
    band = config.band.to_band()
    solution, report = solve_rfbgsde(problem, band, config.grid.lattice_config(), tol=config.tolerances.tol,
                                     max_outer=config.tolerances.max_outer, inner=_inner(config))
    residuals = residual_check(problem, solution)

    frame = lattice_frame(solution.lattice, {
        "X": solution.X, "Y": solution.Y, "Z": solution.Z, "dA": solution.dA,
        "S": solution.S, "U": solution.upper_envelope.Y,
    })
    iterations = pd.DataFrame([
        {"iteration": r.iteration, "deltaX": r.delta_x, "deltaY": r.delta_y,
         "violationX": r.violation_x, "violationY": r.violation_y, "marginS": r.margin_s,
         "marginU": r.margin_u, "marginL": r.margin_l, "defect": r.defect, "z_norm": r.z_norm}
        for r in report.records
    ])
    artifacts = [
        write_csv(frame, out_dir / "rfbsde_solution.csv", "rfbsde-solution"),
        write_csv(iterations, out_dir / "rfbsde_iterations.csv", "rfbsde-iterations"),
        write_report([
            f"problem: {problem.name}",
            f"decoupled: {problem.is_decoupled}",
            f"y0: {solution.backward.y0:.12g}",
            *report.as_lines(),
            *residuals.as_lines(),
        ], out_dir / "rfbsde_report.txt"),
    ]
    return artifacts


HANDLERS: dict[str, Callable[[ExperimentConfig, Path], list[Path]]] = {
    "gheat": run_gheat,
    "paths": run_paths,
    "infconv": run_infconv,
    "forward": run_forward,
    "rbsde": run_rbsde,
    "rfbsde": run_rfbsde,
}


def run(subcommand: str, config: ExperimentConfig, out_dir: Path) -> Path:
    """
    Run one subcommand and write its manifest.

    Returns:
        Path of the manifest

    Raises:
        ConfigurationError: Unknown subcommand or invalid inputs
    """
    if subcommand not in HANDLERS:
        raise ConfigurationError(f"Unknown subcommand '{subcommand}'; choose from {', '.join(HANDLERS)}")
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running '{subcommand}' into {out_dir}")
    artifacts = HANDLERS[subcommand](config, out_dir)
    echo = out_dir / CONFIG_ECHO
    save_config(config, echo)
    artifacts.append(echo)
    return write_manifest(out_dir, subcommand, config.to_dict(), config.family.seed, artifacts)


def audit_manifest(manifest_path: Path) -> list[str]:
    """
    Check the stored artifacts, then repeat the recorded run in a scratch
    directory and compare checksums.

    Returns:
        Names of the artifacts that reproduced

    Raises:
        AuditError: If a stored or repeated artifact differs or is missing
    """
    manifest_path = Path(manifest_path)
    run_dir = manifest_path if manifest_path.is_dir() else manifest_path.parent
    manifest = read_manifest(manifest_path)

    stored = compare_checksums(manifest["artifacts"], run_dir)
    if stored:
        raise AuditError(f"Stored artifacts in {run_dir} differ from the manifest: {', '.join(stored)}")

    config = config_from_dict(manifest["config"])
    with tempfile.TemporaryDirectory(prefix="gdesk-audit-") as scratch:
        run(manifest["subcommand"], config, Path(scratch))
        mismatched = compare_checksums(manifest["artifacts"], Path(scratch))
    if mismatched:
        raise AuditError(f"Repeated run differs from the manifest: {', '.join(mismatched)}")
    logger.info(f"Audit reproduced {len(manifest['artifacts'])} artifacts byte for byte")
    return sorted(manifest["artifacts"])
