"""Convergence studies: run a method over a resolution ladder against the oracle.

A ``Scenario`` fixes the problem, the method and the ladder. ``run_study``
executes the ladder points concurrently in worker threads, measures the error
of each point against ``ExactSolution`` and fits log(error) against
log(resolution). Reports are written as CSV (one row per ladder point) and as
a JSON summary.
"""

import asyncio
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import config
from src.ifem import DiscreteSolution, build_mesh_with_step, evaluate_uh, theta_scheme_solve
from src.oracle import ExactSolution
from src.problem import (
    InterfaceProblem,
    alpha_of_lambda,
    bump_profile,
    error_constants,
    local_time_drift,
    resolve_lambda,
    suggested_half_width,
    symmetrize,
    validate_problem,
)
from src.sde import SimConfig, monte_carlo_estimate

logger = logging.getLogger(__name__)

METHOD_BE = "ifem-be"
METHOD_CN = "ifem-cn"
METHOD_SDE = "sde-em"
METHODS = (METHOD_BE, METHOD_CN, METHOD_SDE)

CSV_COLUMNS = (
    "scenario-id",
    "method",
    "D_plus",
    "D_minus",
    "lambda",
    "resolution",
    "error",
    "slope-so-far",
    "wall-ms",
)


class StudyError(RuntimeError):
    """Raised when a ladder point of a study fails; carries the scenario context."""

    def __init__(self, scenario_id: str, resolution: float, message: str):
        super().__init__(f"Scenario {scenario_id} at resolution {resolution}: {message}")
        self.scenario_id = scenario_id
        self.resolution = resolution


def theta_for(method: str) -> float:
    if method == METHOD_BE:
        return 1.0
    if method == METHOD_CN:
        return 0.5
    raise ValueError(f"Method {method} has no theta-scheme")


def startup_steps_for(method: str) -> int:
    """Backward Euler start-up steps used by studies of ``method``."""
    return config.CN_STARTUP_STEPS if method == METHOD_CN else 0


def time_step_for(method: str, h: float) -> float:
    """Time step paired with mesh step h: h^2 for backward Euler, h/4 for Crank-Nicolson."""
    if method == METHOD_BE:
        return h * h
    if method == METHOD_CN:
        return h / 4.0
    raise ValueError(f"Method {method} has no mesh-step schedule")


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    method: str
    problem: InterfaceProblem
    ladder: tuple[float, ...]
    window: tuple[float, float] = config.ERROR_WINDOW
    x0: float = 0.0
    n_paths: int = config.DEFAULT_PATHS
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"Unknown method '{self.method}', expected one of {METHODS}")
        if len(self.ladder) < 3:
            raise ValueError(f"Resolution ladder needs at least 3 entries, got {len(self.ladder)}")
        if any(b >= a for a, b in zip(self.ladder[:-1], self.ladder[1:])):
            raise ValueError(f"Resolution ladder must be strictly decreasing: {self.ladder}")
        validate_problem(self.problem)

    @property
    def is_sde(self) -> bool:
        return self.method == METHOD_SDE


@dataclass
class ConvergenceReport:
    scenario: Scenario
    resolutions: list[float]
    errors: list[float]
    slope: float
    intercept: float
    slopes_so_far: list[float | None]
    diagnostics: dict[str, float]
    wall_ms: list[float] = field(default_factory=list)
    std_errors: list[float] = field(default_factory=list)
    # Monte Carlo points whose error is indistinguishable from sampling noise
    noise_flags: list[bool] = field(default_factory=list)
    monotone_within_noise: bool = True

    @property
    def rate_resolved(self) -> bool:
        return math.isfinite(self.slope)

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.resolutions, self.errors))


def error_l2_linf(
    sol: DiscreteSolution,
    oracle,
    window: tuple[float, float] = config.ERROR_WINDOW,
    all_levels: bool = False,
) -> float:
    """Discrete L2 error in space, maximised over time levels.

    ``oracle(t, xs)`` must return the reference values at the nodes xs. Only
    the final level is measured unless ``all_levels`` is set.
    """
    lo, hi = window
    nodes = sol.mesh.nodes
    slack = 1e-12 * sol.mesh.h
    mask = (nodes >= lo - slack) & (nodes <= hi + slack)
    if not np.any(mask):
        raise ValueError(f"No mesh nodes inside the error window {window}")

    xs = nodes[mask]
    levels = range(sol.n_steps + 1) if all_levels else [sol.n_steps]
    worst = 0.0
    for k in levels:
        diff = sol.coefficients[k][mask] - np.asarray(oracle(float(sol.times[k]), xs), dtype=float)
        worst = max(worst, math.sqrt(sol.mesh.h * float(np.sum(diff * diff))))
    return worst


def fit_power_law(pairs) -> tuple[float, float]:
    """Least-squares slope and intercept of log(error) against log(resolution).

    Pairs with a nonpositive or non-finite error are skipped with a warning.
    """
    usable = []
    for resolution, error in pairs:
        if error > 0 and math.isfinite(error) and resolution > 0:
            usable.append((resolution, error))
        else:
            logger.warning(f"Excluding point ({resolution}, {error}) from the rate fit")
    if len(usable) < 2:
        raise ValueError(f"Rate fit needs at least 2 usable points, got {len(usable)}")

    h, err = np.array(usable).T
    slope, intercept = np.polyfit(np.log(h), np.log(err), 1)
    return float(slope), float(intercept)


def fit_rate(pairs) -> float:
    return fit_power_law(pairs)[0]


def noise_dominated(
    errors: list[float], std_errors: list[float], sigmas: float = config.NOISE_SIGMAS
) -> list[bool]:
    """Flag errors no larger than ``sigmas`` Monte Carlo standard errors."""
    return [error <= sigmas * se for error, se in zip(errors, std_errors)]


def nonincreasing_within_noise(
    errors: list[float], std_errors: list[float], sigmas: float = config.NOISE_SIGMAS
) -> bool:
    """True when no refinement raises the error by more than the combined noise."""
    for k in range(len(errors) - 1):
        slack = sigmas * math.hypot(std_errors[k], std_errors[k + 1])
        if errors[k + 1] > errors[k] + slack:
            return False
    return True


def _slopes_so_far(
    pairs: list[tuple[float, float]], keep: list[bool] | None = None
) -> list[float | None]:
    keep = keep or [True] * len(pairs)
    slopes: list[float | None] = [None]
    for k in range(2, len(pairs) + 1):
        usable = [pair for pair, kept in zip(pairs[:k], keep[:k]) if kept]
        if len(usable) < 2:
            slopes.append(None)
            continue
        try:
            slopes.append(fit_rate(usable))
        except ValueError:
            slopes.append(None)
    return slopes


def _diagnostics(scenario: Scenario) -> dict[str, float]:
    problem = scenario.problem
    finest = scenario.ladder[-1]
    step = finest if scenario.is_sde else time_step_for(scenario.method, finest)
    n_steps = max(1, math.ceil(problem.final_time_T / step - 1e-9))

    diagnostics = error_constants(symmetrize(problem), n_steps).as_dict()
    diagnostics["alpha"] = alpha_of_lambda(problem).alpha
    diagnostics["local_time_drift"] = local_time_drift(problem)
    return diagnostics


def _run_point(scenario: Scenario, resolution: float, oracle: ExactSolution) -> tuple[float, float, float]:
    """Error, standard error and wall time in ms for one ladder point."""
    start = time.perf_counter()
    problem = scenario.problem
    try:
        if scenario.is_sde:
            cfg = SimConfig(
                delta_t=resolution,
                n_paths=scenario.n_paths,
                seed=scenario.seed,
                x0=scenario.x0,
                final_time_T=problem.final_time_T,
            )
            estimate = monte_carlo_estimate(problem, cfg)
            error = abs(estimate.mean - oracle(problem.final_time_T, scenario.x0))
            std_error = estimate.std_error
        else:
            mesh = build_mesh_with_step(problem.half_width_L, resolution)
            sol = theta_scheme_solve(
                problem,
                mesh,
                theta_for(scenario.method),
                time_step_for(scenario.method, resolution),
                startup_steps=startup_steps_for(scenario.method),
            )
            error = error_l2_linf(sol, oracle, scenario.window)
            std_error = 0.0
    except Exception as e:
        logger.error(f"Scenario {scenario.scenario_id} failed at resolution {resolution}: {e}")
        raise StudyError(scenario.scenario_id, resolution, str(e)) from e

    wall_ms = (time.perf_counter() - start) * 1000.0
    logger.info(
        f"{scenario.scenario_id}: resolution={resolution:.4g} error={error:.4e} ({wall_ms:.0f} ms)"
    )
    return error, std_error, wall_ms


async def run_study(
    s: Scenario,
    semaphore: asyncio.Semaphore | None = None,
    oracle: ExactSolution | None = None,
) -> ConvergenceReport:
    """Run every ladder point of ``s`` and fit the convergence rate."""
    semaphore = semaphore or asyncio.Semaphore(config.THREADS)
    oracle = oracle or ExactSolution(s.problem)

    async def point(resolution: float):
        async with semaphore:
            return await asyncio.to_thread(_run_point, s, resolution, oracle)

    logger.info(f"Starting study {s.scenario_id} ({s.method}, {len(s.ladder)} points)")
    results = await asyncio.gather(*(point(r) for r in s.ladder))

    resolutions = list(s.ladder)
    errors = [r[0] for r in results]
    pairs = list(zip(resolutions, errors))
    std_errors = [r[1] for r in results] if s.is_sde else []
    noise_flags = noise_dominated(errors, std_errors) if s.is_sde else [False] * len(errors)

    fitted = [pair for pair, noisy in zip(pairs, noise_flags) if not noisy]
    for (resolution, error), noisy in zip(pairs, noise_flags):
        if noisy:
            logger.info(
                f"{s.scenario_id}: error {error:.3e} at resolution {resolution:.4g} "
                f"is within {config.NOISE_SIGMAS:g} standard errors; left out of the rate fit"
            )
    if s.is_sde and len(fitted) < 2:
        logger.warning(f"Study {s.scenario_id}: errors are within Monte Carlo noise, no rate fitted")
        slope = intercept = math.nan
    else:
        slope, intercept = fit_power_law(fitted)

    report = ConvergenceReport(
        scenario=s,
        resolutions=resolutions,
        errors=errors,
        slope=slope,
        intercept=intercept,
        slopes_so_far=_slopes_so_far(pairs, [not noisy for noisy in noise_flags]),
        diagnostics=_diagnostics(s),
        wall_ms=[r[2] for r in results],
        std_errors=std_errors,
        noise_flags=noise_flags if s.is_sde else [],
        monotone_within_noise=nonincreasing_within_noise(errors, std_errors) if s.is_sde else True,
    )
    if s.is_sde and not report.monotone_within_noise:
        logger.warning(f"Study {s.scenario_id}: error grows beyond Monte Carlo noise under refinement")
    logger.info(f"Study {s.scenario_id} finished: slope={slope:.3f}")
    return report


async def run_studies(scenarios: list[Scenario]) -> list[ConvergenceReport]:
    """Run several studies concurrently; reports come back in scenario order."""
    semaphore = asyncio.Semaphore(config.THREADS)
    oracles: dict[int, ExactSolution] = {}
    for s in scenarios:
        oracles.setdefault(id(s.problem), ExactSolution(s.problem))
    return list(
        await asyncio.gather(*(run_study(s, semaphore, oracles[id(s.problem)]) for s in scenarios))
    )


def build_problem(
    d_plus: float,
    d_minus: float,
    lam: float | str,
    final_time_T: float = config.DEFAULT_FINAL_TIME,
    half_width_L: float | None = None,
) -> InterfaceProblem:
    """Problem with the default bump profile and a boundary-safe default L."""
    if half_width_L is None:
        half_width_L = suggested_half_width(
            d_plus, d_minus, final_time_T, window=config.ERROR_WINDOW[1], minimum=config.MIN_HALF_WIDTH
        )
    return validate_problem(
        InterfaceProblem(
            d_plus=d_plus,
            d_minus=d_minus,
            lam=resolve_lambda(lam, d_plus, d_minus),
            u0=bump_profile(),
            half_width_L=half_width_L,
            final_time_T=final_time_T,
        )
    )


def default_ladder(method: str, final_time_T: float = config.DEFAULT_FINAL_TIME) -> tuple[float, ...]:
    if method == METHOD_SDE:
        return config.get_sde_ladder(final_time_T)
    return config.IFEM_LADDER


def scenarios_for(
    scenario_id: str,
    method: str,
    problem: InterfaceProblem,
    ladder: tuple[float, ...] | None = None,
    points: tuple[float, ...] = config.SDE_POINTS,
    n_paths: int = config.DEFAULT_PATHS,
    seed: int = 0,
) -> list[Scenario]:
    """One scenario for an IFEM method, one per evaluation point for SDE-EM."""
    ladder = ladder or default_ladder(method, problem.final_time_T)
    if method != METHOD_SDE:
        return [Scenario(scenario_id, method, problem, tuple(ladder))]
    return [
        Scenario(
            f"{scenario_id}-x{x0:+g}",
            method,
            problem,
            tuple(ladder),
            x0=x0,
            n_paths=n_paths,
            seed=seed,
        )
        for x0 in points
    ]


def scenarios_from_preset(
    name: str,
    n_paths: int = config.DEFAULT_PATHS,
    seed: int = 0,
    points: tuple[float, ...] = config.SDE_POINTS,
) -> list[Scenario]:
    """Expand a preset or preset group into scenarios."""
    scenarios = []
    for preset in config.get_preset(name):
        problem = build_problem(
            preset["d_plus"], preset["d_minus"], preset["lambda"], preset["final_time"]
        )
        scenarios.extend(
            scenarios_for(
                preset["name"], preset["method"], problem, points=points, n_paths=n_paths, seed=seed
            )
        )
    return scenarios


def solution_profile(
    problem: InterfaceProblem,
    xs,
    h: float = config.IFEM_LADDER[-1],
    sde_steps: int = 2 ** config.SDE_LADDER_EXPONENTS[-1],
    n_paths: int = config.DEFAULT_PATHS,
    seed: int = 0,
) -> list[dict[str, float]]:
    """Initial profile and the three final-time solutions tabulated on xs."""
    xs = [float(x) for x in xs]
    T = problem.final_time_T
    mesh = build_mesh_with_step(problem.half_width_L, h)
    sol = theta_scheme_solve(
        problem, mesh, 0.5, time_step_for(METHOD_CN, h), startup_steps=startup_steps_for(METHOD_CN)
    )
    oracle = ExactSolution(problem)

    rows = []
    for x in xs:
        cfg = SimConfig.from_steps(T, sde_steps, n_paths, seed, x)
        estimate = monte_carlo_estimate(problem, cfg)
        rows.append(
            {
                "x": x,
                "u0": float(problem.u0(x)),
                "ifem_cn": evaluate_uh(sol, sol.n_steps, x),
                "sde_em": estimate.mean,
                "sde_std_error": estimate.std_error,
                "exact": oracle(T, x),
            }
        )
    return rows


def _format_float(value: float | None) -> str:
    if value is None:
        return ""
    return repr(float(value))


def report_rows(report: ConvergenceReport, include_timing: bool = True) -> list[list[str]]:
    s = report.scenario
    rows = []
    for k, (resolution, error) in enumerate(report.pairs):
        rows.append(
            [
                s.scenario_id,
                s.method,
                _format_float(s.problem.d_plus),
                _format_float(s.problem.d_minus),
                _format_float(s.problem.lam),
                _format_float(resolution),
                _format_float(error),
                _format_float(report.slopes_so_far[k]),
                f"{report.wall_ms[k]:.1f}" if include_timing and report.wall_ms else "",
            ]
        )
    return rows


def write_csv(reports: list[ConvergenceReport], path: Path, include_timing: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerows(report_rows(report, include_timing))
    logger.info(f"Wrote {len(reports)} report(s) to {path}")
    return path


def _json_safe(value):
    """Replace non-finite floats by strings so the output stays valid JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        if math.isnan(value):
            return "nan"
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_json_safe(v) for v in value]
    return value


def summary_dict(report: ConvergenceReport, include_timing: bool = True) -> dict:
    s = report.scenario
    entry = {
        "scenario_id": s.scenario_id,
        "method": s.method,
        "d_plus": s.problem.d_plus,
        "d_minus": s.problem.d_minus,
        "lambda": s.problem.lam,
        "final_time": s.problem.final_time_T,
        "half_width_L": s.problem.half_width_L,
        "resolutions": report.resolutions,
        "errors": report.errors,
        "slope": report.slope,
        "intercept": report.intercept,
        "diagnostics": report.diagnostics,
    }
    if s.is_sde:
        entry.update(
            x0=s.x0,
            n_paths=s.n_paths,
            seed=s.seed,
            std_errors=report.std_errors,
            noise_flags=report.noise_flags,
            monotone_within_noise=report.monotone_within_noise,
        )
    if include_timing:
        entry["wall_ms_total"] = sum(report.wall_ms)
    return entry


def write_summary_json(
    reports: list[ConvergenceReport], path: Path, include_timing: bool = True
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"studies": [summary_dict(r, include_timing) for r in reports]}
    with open(path, "w") as f:
        json.dump(_json_safe(payload), f, indent=2)
        f.write("\n")
    logger.info(f"Wrote summary to {path}")
    return path
