"""Euler-Maruyama Monte Carlo for the transformed skew diffusion.

The process X = beta(Y) is driftless with piecewise constant volatility, so
each step is a single coefficient lookup and one Gaussian increment. Paths
start at beta(x0), are advanced to the final time and mapped back with
beta^-1 before u0 is applied.

Paths are grouped into fixed-size blocks. Block b draws from a Philox stream
keyed by SeedSequence(seed, spawn_key=(b,)), and block statistics are merged
in block order, so the estimate depends only on (seed, n_paths, block size)
and never on how many workers ran the blocks.
"""

import logging
import math
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

import config
from src.problem import (
    InterfaceProblem,
    SkewParameters,
    alpha_of_lambda,
    beta_forward,
    beta_inverse,
    theta_coefficient,
    validate_problem,
)

logger = logging.getLogger(__name__)

# Relative slack when checking that delta_t divides the final time
STEP_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SimConfig:
    delta_t: float
    n_paths: int
    seed: int
    x0: float
    final_time_T: float = config.DEFAULT_FINAL_TIME

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be at least 1, got {self.n_paths}")
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")
        steps = self.final_time_T / self.delta_t
        if abs(steps - round(steps)) > STEP_TOLERANCE * max(1.0, steps):
            raise ValueError(
                f"delta_t={self.delta_t} does not divide the final time {self.final_time_T}"
            )

    @property
    def n_steps(self) -> int:
        return max(1, round(self.final_time_T / self.delta_t))

    @classmethod
    def from_steps(cls, final_time_T: float, n_steps: int, n_paths: int, seed: int, x0: float):
        return cls(
            delta_t=final_time_T / n_steps,
            n_paths=n_paths,
            seed=seed,
            x0=x0,
            final_time_T=final_time_T,
        )


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    delta_t: float
    x0: float = 0.0
    wall_ms: float = 0.0


def block_generator(seed: int, key: int) -> np.random.Generator:
    """Independent Philox stream for block (or path) ``key``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key,))))


def standard_normals(rng: np.random.Generator, size: int, sampler: str | None = None) -> np.ndarray:
    """Draw ``size`` standard normals from uniforms with a fixed transform."""
    sampler = sampler or config.NORMAL_SAMPLER
    if sampler == "inverse-cdf":
        u = rng.random(size)
        return ndtri(np.maximum(u, np.finfo(float).tiny))
    if sampler == "box-muller":
        pairs = (size + 1) // 2
        u1 = 1.0 - rng.random(pairs)
        u2 = rng.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        return np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:size]
    raise ValueError(f"Unknown normal sampler '{sampler}', expected one of {config.SUPPORTED_SAMPLERS}")


def euler_step(x_k, dW, sp: SkewParameters):
    """One Euler-Maruyama step of the driftless transformed process."""
    return x_k + theta_coefficient(x_k, sp) * dW


def simulate_terminal(
    cfg: SimConfig,
    sp: SkewParameters,
    lam: float,
    path_index: int = 0,
    increments: np.ndarray | None = None,
    sampler: str | None = None,
) -> float:
    """Terminal value beta^-1(X_M) of a single path started at beta(x0).

    ``increments`` overrides the Brownian increments (length n_steps); by
    default they come from the stream keyed by ``path_index``.
    """
    if increments is None:
        rng = block_generator(cfg.seed, path_index)
        increments = math.sqrt(cfg.delta_t) * standard_normals(rng, cfg.n_steps, sampler)
    elif len(increments) != cfg.n_steps:
        raise ValueError(f"Expected {cfg.n_steps} increments, got {len(increments)}")

    x = beta_forward(cfg.x0, lam)
    for dW in increments:
        x = euler_step(x, float(dW), sp)
    return beta_inverse(x, lam)


def simulate_block_terminals(
    problem: InterfaceProblem,
    cfg: SimConfig,
    block: int,
    size: int,
    sampler: str | None = None,
) -> np.ndarray:
    """Terminal values Y(T) of ``size`` paths drawn from block stream ``block``."""
    sp = alpha_of_lambda(problem)
    rng = block_generator(cfg.seed, block)
    scale = math.sqrt(cfg.delta_t)

    x = np.full(size, beta_forward(cfg.x0, problem.lam))
    for _ in range(cfg.n_steps):
        z = standard_normals(rng, size, sampler)
        x += np.where(x <= 0.0, sp.theta_minus, sp.theta_plus) * (scale * z)
    return beta_inverse(x, problem.lam)


@dataclass(frozen=True)
class _BlockStats:
    count: int
    mean: float
    m2: float

    def merge(self, other: "_BlockStats") -> "_BlockStats":
        """Pairwise (Chan et al.) update of count, mean and sum of squares."""
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / count
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / count
        return _BlockStats(count, mean, m2)


def _estimate(
    problem: InterfaceProblem,
    cfg: SimConfig,
    functional: Callable[[np.ndarray], np.ndarray],
    workers: int | None,
    sampler: str | None,
    block_size: int | None,
) -> McEstimate:
    validate_problem(problem)
    if abs(cfg.final_time_T - problem.final_time_T) > STEP_TOLERANCE * problem.final_time_T:
        raise ValueError(
            f"Simulation horizon {cfg.final_time_T} differs from the problem's {problem.final_time_T}"
        )
    block_size = block_size or config.BLOCK_SIZE
    workers = workers or config.THREADS
    n_blocks = math.ceil(cfg.n_paths / block_size)

    def run_block(block: int) -> _BlockStats:
        size = min(block_size, cfg.n_paths - block * block_size)
        values = np.asarray(
            functional(simulate_block_terminals(problem, cfg, block, size, sampler)), dtype=float
        )
        mean = float(values.mean())
        m2 = float(np.sum((values - mean) ** 2))
        logger.debug(f"Block {block}: {size} paths, mean={mean:.6g}")
        return _BlockStats(size, mean, m2)

    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        stats = list(pool.map(run_block, range(n_blocks)))

    total = stats[0]
    for block_stats in stats[1:]:
        total = total.merge(block_stats)
    wall_ms = (time.perf_counter() - start) * 1000.0

    if total.count > 1:
        std_error = math.sqrt(total.m2 / (total.count - 1)) / math.sqrt(total.count)
    else:
        std_error = 0.0
    return McEstimate(
        mean=total.mean,
        std_error=std_error,
        n_paths=total.count,
        seed=cfg.seed,
        delta_t=cfg.delta_t,
        x0=cfg.x0,
        wall_ms=wall_ms,
    )


def monte_carlo_estimate(
    problem: InterfaceProblem,
    cfg: SimConfig,
    workers: int | None = None,
    sampler: str | None = None,
    block_size: int | None = None,
) -> McEstimate:
    """Monte Carlo estimate of u(T, x0) = E u0(Y(T)) with its standard error."""
    estimate = _estimate(problem, cfg, problem.u0, workers, sampler, block_size)
    logger.info(
        f"MC estimate at x0={cfg.x0}: {estimate.mean:.6g} +- {estimate.std_error:.2g} "
        f"({cfg.n_paths} paths, dt={cfg.delta_t:.4g}, {estimate.wall_ms:.0f} ms)"
    )
    return estimate


def sign_fraction(
    problem: InterfaceProblem,
    cfg: SimConfig,
    workers: int | None = None,
    sampler: str | None = None,
    block_size: int | None = None,
) -> McEstimate:
    """Fraction of paths ending strictly above the interface."""

    def positive(y: np.ndarray) -> np.ndarray:
        return (y > 0.0).astype(float)

    return _estimate(problem, cfg, positive, workers, sampler, block_size)
