"""Command-line front end.

    python main.py solve-pde    --dplus 10 --lambda lambda-star --theta 0.5 --h 0.025
    python main.py simulate-sde --dplus 10 --paths 1000000 --seed 42 --out sde.csv
    python main.py exact        --dplus 10 --t 0.2 --x 0
    python main.py converge     --preset ifem-be --out runs/be.csv
    python main.py profile      --dplus 100 --lambda lambda-star --x -2 -1 0 1 2

Settings come from a flat TOML file (``--config``) overridden by flags.
Exit status: 0 success, 1 numeric failure, 2 I/O failure, 64 usage error.
"""

import argparse
import asyncio
import csv
import logging
import sys
import time
import tomllib
from dataclasses import dataclass, field
from pathlib import Path

import config
from src.harness import (
    METHODS,
    StudyError,
    build_problem,
    run_studies,
    scenarios_for,
    scenarios_from_preset,
    solution_profile,
    write_csv,
    write_summary_json,
)
from src.ifem import SolverError, build_mesh_with_step, evaluate_uh, theta_scheme_solve
from src.logging_config import setup_logging
from src.oracle import OracleError, exact_solution_u
from src.problem import InterfaceProblem, ProblemValidationError
from src.sde import SimConfig, monte_carlo_estimate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_IO = 2
EXIT_USAGE = 64

COMMANDS = ("solve-pde", "simulate-sde", "exact", "converge", "profile")

# Keys accepted in a --config file, mapped to RunConfig fields
FILE_KEYS = {
    "command": "command",
    "dplus": "d_plus",
    "dminus": "d_minus",
    "lambda": "lam",
    "T": "final_time",
    "L": "half_width",
    "theta": "theta",
    "startup_steps": "startup_steps",
    "h": "h",
    "dt": "dt",
    "paths": "paths",
    "seed": "seed",
    "points": "points",
    "x": "points",
    "t": "t",
    "out": "out",
    "preset": "preset",
    "method": "method",
}


class ConfigError(ValueError):
    """Usage error: bad flags, bad config file or missing fields."""

    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(message)
        self.field = field_name


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(message)


@dataclass
class RunConfig:
    command: str
    d_plus: float | None = None
    d_minus: float = config.DEFAULT_D_MINUS
    lam: float | str = "lambda-sharp"
    final_time: float = config.DEFAULT_FINAL_TIME
    half_width: float | None = None
    theta: float = 0.5
    startup_steps: int | None = None
    h: float = config.IFEM_LADDER[-1]
    dt: float | None = None
    paths: int = config.DEFAULT_PATHS
    seed: int = 0
    points: tuple[float, ...] = config.SDE_POINTS
    t: float | None = None
    out: Path | None = None
    preset: str | None = None
    method: str | None = None
    timing: bool = True
    log_level: str = config.LOG_LEVEL
    problem: InterfaceProblem | None = field(default=None, repr=False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="skewdiff",
        description="Interface diffusion: IFEM, Euler-Maruyama Monte Carlo and the exact solution.",
    )
    parser.add_argument("command", nargs="?", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="flat TOML file with default settings")
    parser.add_argument("--dplus", dest="d_plus", type=float)
    parser.add_argument("--dminus", dest="d_minus", type=float)
    parser.add_argument(
        "--lambda", dest="lam", help="number in (0, 1), 'lambda-star' or 'lambda-sharp'"
    )
    parser.add_argument("--T", dest="final_time", type=float, help="final time")
    parser.add_argument("--L", dest="half_width", type=float, help="domain half-width")
    parser.add_argument("--theta", type=float)
    parser.add_argument(
        "--startup-steps",
        dest="startup_steps",
        type=int,
        help="leading steps taken as two backward Euler half-steps (default: 2 for theta = 0.5)",
    )
    parser.add_argument("--h", type=float, help="mesh step")
    parser.add_argument("--dt", type=float, help="time step")
    parser.add_argument("--paths", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--points", "--x", dest="points", type=float, nargs="+")
    parser.add_argument("--t", type=float, help="evaluation time for 'exact'")
    parser.add_argument("--out", type=Path)
    parser.add_argument("--preset", help=f"one of {sorted(config.PRESETS)} or a group")
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--no-timing", action="store_true", help="leave timings out of outputs")
    parser.add_argument("--log-level")
    return parser


def _read_config_file(path: Path) -> dict:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}") from e

    values = {}
    for key, value in data.items():
        if key not in FILE_KEYS:
            raise ConfigError(f"Unknown config key '{key}' in {path}", key)
        if isinstance(value, dict):
            raise ConfigError(f"Config key '{key}' must be a plain value, not a table", key)
        values[FILE_KEYS[key]] = value
    return values


def _require(value, name: str):
    if value is None:
        raise ConfigError(f"Missing required field: {name}", name)
    return value


def parse_config(argv: list[str] | None = None) -> RunConfig:
    """Parse flags (and an optional config file) into a validated RunConfig."""
    args = vars(build_parser().parse_args(argv))
    settings = _read_config_file(args["config"]) if args["config"] else {}
    for key, value in args.items():
        if key not in ("config", "no_timing", "log_level") and value is not None:
            settings[key] = value

    command = settings.pop("command", None)
    if command not in COMMANDS:
        raise ConfigError(f"A command is required: one of {', '.join(COMMANDS)}", "command")

    if "points" in settings:
        points = settings["points"]
        if not isinstance(points, list | tuple):
            points = [points]
        settings["points"] = tuple(float(p) for p in points)
    if "out" in settings:
        settings["out"] = Path(settings["out"])

    try:
        cfg = RunConfig(command=command, **settings)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    cfg.timing = not args["no_timing"]
    if args["log_level"]:
        cfg.log_level = args["log_level"].upper()

    if cfg.method is not None and cfg.method not in METHODS:
        raise ConfigError(f"Unknown method '{cfg.method}'", "method")
    if cfg.paths < 1:
        raise ConfigError(f"paths must be at least 1, got {cfg.paths}", "paths")
    if cfg.t is not None and cfg.t < 0:
        raise ConfigError(f"t must be nonnegative, got {cfg.t}", "t")

    if command == "converge" and cfg.preset is not None:
        if cfg.preset.lower() not in config.PRESETS and cfg.preset.lower() not in config.PRESET_GROUPS:
            raise ConfigError(f"Unknown preset '{cfg.preset}'", "preset")
        return cfg
    if command == "converge":
        _require(cfg.method, "method")

    d_plus = _require(cfg.d_plus, "dplus")
    cfg.problem = build_problem(d_plus, cfg.d_minus, cfg.lam, cfg.final_time, cfg.half_width)
    cfg.lam = cfg.problem.lam

    if command == "simulate-sde":
        dt = cfg.dt or cfg.final_time / 2 ** config.SDE_LADDER_EXPONENTS[-1]
        steps = cfg.final_time / dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"dt={dt} must divide T={cfg.final_time}", "dt")
        cfg.dt = dt
    if command == "solve-pde" and not 0.0 <= cfg.theta <= 1.0:
        raise ConfigError(f"theta must lie in [0, 1], got {cfg.theta}", "theta")
    if cfg.startup_steps is not None and cfg.startup_steps < 0:
        raise ConfigError(f"startup_steps must be nonnegative, got {cfg.startup_steps}", "startup_steps")
    if command in ("solve-pde", "profile"):
        width = cfg.problem.half_width_L
        outside = [x for x in cfg.points if not -width <= x <= width]
        if outside:
            raise ConfigError(f"points {outside} lie outside the domain [-{width:g}, {width:g}]", "points")
    return cfg


def _write_table(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    logger.info(f"Wrote {path}")


def _timing(cfg: RunConfig, start: float) -> str:
    if not cfg.timing:
        return ""
    return f" wall={(time.perf_counter() - start) * 1000.0:.0f}ms"


def _describe(cfg: RunConfig) -> str:
    p = cfg.problem
    return f"D+={p.d_plus:g} D-={p.d_minus:g} lambda={p.lam:.6g} T={p.final_time_T:g}"


def _solve_pde(cfg: RunConfig, start: float) -> int:
    dt = cfg.dt or (cfg.h * cfg.h if cfg.theta == 1.0 else cfg.h / 4.0)
    startup = cfg.startup_steps
    if startup is None:
        startup = config.CN_STARTUP_STEPS if cfg.theta == 0.5 else 0
    mesh = build_mesh_with_step(cfg.problem.half_width_L, cfg.h)
    sol = theta_scheme_solve(cfg.problem, mesh, cfg.theta, dt, startup_steps=startup)
    values = [evaluate_uh(sol, sol.n_steps, x) for x in cfg.points]

    if cfg.out:
        _write_table(cfg.out, ["x", "u_h"], [[float(x), float(u)] for x, u in zip(mesh.nodes, sol.final)])
    shown = " ".join(f"u_h({x:g})={u:.8g}" for x, u in zip(cfg.points, values))
    print(f"solve-pde {_describe(cfg)} theta={cfg.theta:g} h={cfg.h:g} dt={sol.delta_t:.4g} {shown}{_timing(cfg, start)}")
    return EXIT_OK


def _simulate_sde(cfg: RunConfig, start: float) -> int:
    rows = []
    for x0 in cfg.points:
        sim = SimConfig(
            delta_t=cfg.dt, n_paths=cfg.paths, seed=cfg.seed, x0=x0, final_time_T=cfg.final_time
        )
        estimate = monte_carlo_estimate(cfg.problem, sim)
        rows.append([x0, estimate.mean, estimate.std_error, estimate.n_paths, estimate.seed, estimate.delta_t])

    if cfg.out:
        _write_table(cfg.out, ["x0", "mean", "std_error", "n_paths", "seed", "delta_t"], rows)
    shown = " ".join(f"u({r[0]:g})={r[1]:.6g}+-{r[2]:.2g}" for r in rows)
    print(f"simulate-sde {_describe(cfg)} dt={cfg.dt:.4g} paths={cfg.paths} seed={cfg.seed} {shown}{_timing(cfg, start)}")
    return EXIT_OK


def _exact(cfg: RunConfig, start: float) -> int:
    t = cfg.final_time if cfg.t is None else cfg.t
    rows = [[x, t, exact_solution_u(cfg.problem, t, x)] for x in cfg.points]
    if cfg.out:
        _write_table(cfg.out, ["x", "t", "u"], rows)
    shown = " ".join(f"u({t:g},{r[0]:g})={r[2]:.10g}" for r in rows)
    print(f"exact {_describe(cfg)} {shown}{_timing(cfg, start)}")
    return EXIT_OK


def _converge(cfg: RunConfig, start: float) -> int:
    if cfg.preset is not None:
        scenarios = scenarios_from_preset(
            cfg.preset, n_paths=cfg.paths, seed=cfg.seed, points=cfg.points
        )
    else:
        scenario_id = f"{cfg.method}-d{cfg.problem.d_plus:g}-lambda{cfg.problem.lam:.4g}"
        scenarios = scenarios_for(
            scenario_id, cfg.method, cfg.problem, points=cfg.points, n_paths=cfg.paths, seed=cfg.seed
        )

    reports = asyncio.run(run_studies(scenarios))
    if cfg.out:
        write_csv(reports, cfg.out, include_timing=cfg.timing)
        write_summary_json(reports, cfg.out.with_suffix(".json"), include_timing=cfg.timing)
    for report in reports:
        s = report.scenario
        note = "" if report.rate_resolved else " (errors within Monte Carlo noise)"
        print(
            f"converge {s.scenario_id} {s.method} slope={report.slope:.3f} "
            f"finest-error={report.errors[-1]:.3e}{note}"
        )
    print(f"converge {len(reports)} studies{_timing(cfg, start)}")
    return EXIT_OK


def _profile(cfg: RunConfig, start: float) -> int:
    rows = solution_profile(cfg.problem, cfg.points, h=cfg.h, n_paths=cfg.paths, seed=cfg.seed)
    header = ["x", "u0", "ifem_cn", "sde_em", "sde_std_error", "exact"]
    if cfg.out:
        _write_table(cfg.out, header, [[row[k] for k in header] for row in rows])
    worst = max(abs(row["ifem_cn"] - row["exact"]) for row in rows)
    print(f"profile {_describe(cfg)} points={len(rows)} max|ifem-exact|={worst:.3e}{_timing(cfg, start)}")
    return EXIT_OK


HANDLERS = {
    "solve-pde": _solve_pde,
    "simulate-sde": _simulate_sde,
    "exact": _exact,
    "converge": _converge,
    "profile": _profile,
}


def dispatch(cfg: RunConfig) -> int:
    """Run the command in ``cfg`` and return its exit status."""
    start = time.perf_counter()
    logger.info(f"Running {cfg.command}")
    try:
        return HANDLERS[cfg.command](cfg, start)
    except (SolverError, OracleError, StudyError, FloatingPointError) as e:
        logger.error(f"{cfg.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        logger.error(f"{cfg.command} could not write its output: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        logger.error(f"{cfg.command} rejected its input: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main(argv: list[str] | None = None) -> int:
    try:
        cfg = parse_config(argv)
        setup_logging(cfg.log_level, config.LOG_FILE, stream=sys.stderr)
        try:
            config.validate_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e
    except (ConfigError, ProblemValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        print(build_parser().format_usage().rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO

    return dispatch(cfg)
