"""Reference solution from the skew Brownian motion transition density.

u(t, x) = integral of u0(y) q(t, x, y) dy, where q is the density of the
skew diffusion obtained by rescaling each side of a skew Brownian motion
with sqrt(D+-). The integral is computed with ``scipy.integrate.quad`` on
windows around the direct and reflected Gaussian centres, split at the
interface and at the support endpoints of u0.
"""

import logging
import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad

import config
from src.problem import (
    InterfaceProblem,
    SkewParameters,
    alpha_of_lambda,
    sqrt_diffusion,
    validate_problem,
)

logger = logging.getLogger(__name__)

# Half-width of an integration window in diffusion lengths
WINDOW_SIGMAS = 12.0


class OracleError(RuntimeError):
    """Raised when the reference quadrature does not reach its tolerance."""
    pass


def _check_time(t: float) -> None:
    if not t > 0:
        raise ValueError(f"Transition densities need t > 0, got {t}")


def _p_scalar(t: float, x: float, y: float, alpha: float) -> float:
    norm = 1.0 / math.sqrt(2.0 * math.pi * t)
    direct = norm * math.exp(-((y - x) ** 2) / (2.0 * t))
    x_pos, y_pos = x > 0.0, y > 0.0
    if x_pos and y_pos:
        return direct + (2.0 * alpha - 1.0) * norm * math.exp(-((x + y) ** 2) / (2.0 * t))
    if not x_pos and not y_pos:
        return direct - (2.0 * alpha - 1.0) * norm * math.exp(-((x + y) ** 2) / (2.0 * t))
    if y_pos:
        return 2.0 * alpha * direct
    return 2.0 * (1.0 - alpha) * direct


def skew_density_p(t: float, x, y, alpha: float):
    """Transition density of skew Brownian motion with skewness ``alpha``.

    Same-side branches are the Gaussian kernel plus or minus (2 alpha - 1)
    times its reflection through 0; cross-side branches are the Gaussian
    kernel scaled by 2 alpha (into y > 0) or 2 (1 - alpha) (into y <= 0).
    """
    _check_time(t)
    if np.ndim(x) == 0 and np.ndim(y) == 0:
        return _p_scalar(t, float(x), float(y), alpha)

    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    norm = 1.0 / math.sqrt(2.0 * math.pi * t)
    direct = norm * np.exp(-((ya - xa) ** 2) / (2.0 * t))
    reflected = norm * np.exp(-((xa + ya) ** 2) / (2.0 * t))
    x_pos, y_pos = xa > 0.0, ya > 0.0

    out = np.where(
        x_pos & y_pos,
        direct + (2.0 * alpha - 1.0) * reflected,
        np.where(
            ~x_pos & ~y_pos,
            direct - (2.0 * alpha - 1.0) * reflected,
            np.where(y_pos, 2.0 * alpha * direct, 2.0 * (1.0 - alpha) * direct),
        ),
    )
    return out


def _q_scalar(t: float, x: float, y: float, sp: SkewParameters, alpha: float) -> float:
    sx = sqrt_diffusion(x, sp)
    sy = sqrt_diffusion(y, sp)
    return _p_scalar(t, x / sx, y / sy, alpha) / sy


def skew_diffusion_density_q(t: float, x, y, sp: SkewParameters, alpha: float | None = None):
    """Density of the skew diffusion: (1/sqrt D(y)) p(t, x/sqrt D(x), y/sqrt D(y))."""
    _check_time(t)
    alpha = sp.alpha if alpha is None else alpha
    if np.ndim(x) == 0 and np.ndim(y) == 0:
        return _q_scalar(t, float(x), float(y), sp, alpha)

    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    sx = sqrt_diffusion(xa, sp)
    sy = sqrt_diffusion(ya, sp)
    return skew_density_p(t, xa / sx, ya / sy, alpha) / sy


def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[tuple[float, float]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def integration_windows(
    t: float,
    x: float,
    sp: SkewParameters,
    support: tuple[float, float] = (-math.inf, math.inf),
) -> list[tuple[float, float]]:
    """Intervals in y carrying all of q(t, x, .) restricted to ``support``.

    On each side the density is concentrated around sigma * (x / sigma(x))
    and its reflection; everything further than WINDOW_SIGMAS diffusion
    lengths is dropped. Intervals never straddle 0.
    """
    x_scaled = x / sqrt_diffusion(x, sp)
    root_t = math.sqrt(t)
    windows = []
    for sigma, side_lo, side_hi in (
        (sp.sigma_minus, -math.inf, 0.0),
        (sp.sigma_plus, 0.0, math.inf),
    ):
        pieces = []
        for centre in (sigma * x_scaled, -sigma * x_scaled):
            half = WINDOW_SIGMAS * sigma * root_t
            lo = max(centre - half, side_lo, support[0])
            hi = min(centre + half, side_hi, support[1])
            if hi > lo:
                pieces.append((lo, hi))
        windows.extend(_merge(pieces))
    return windows


def _integrate(
    integrand: Callable[[float], float],
    windows: list[tuple[float, float]],
    tol: float,
    limit: int,
) -> float:
    total = 0.0
    for a, b in windows:
        with warnings.catch_warnings():
            warnings.simplefilter("error", IntegrationWarning)
            try:
                value, abserr = quad(integrand, a, b, epsabs=tol, epsrel=tol, limit=limit)
            except IntegrationWarning as e:
                logger.warning(f"Quadrature on [{a}, {b}] did not converge: {e}")
                raise OracleError(f"Quadrature on [{a}, {b}] failed: {e}") from e
        allowed = max(tol, tol * abs(value))
        if not abserr <= allowed:
            logger.warning(f"Quadrature on [{a}, {b}] reports error {abserr:.2e} above {allowed:.2e}")
            raise OracleError(
                f"Quadrature on [{a}, {b}] error estimate {abserr:.2e} exceeds tolerance {allowed:.2e}"
            )
        total += value
    return total


@dataclass(frozen=True)
class SkewDensity:
    """Skew diffusion density together with its quadrature settings."""

    params: SkewParameters
    tol: float = config.ORACLE_TOL
    limit: int = config.ORACLE_LIMIT

    @classmethod
    def for_problem(
        cls, problem: InterfaceProblem, tol: float | None = None, limit: int | None = None
    ) -> "SkewDensity":
        return cls(
            params=alpha_of_lambda(problem),
            tol=config.ORACLE_TOL if tol is None else tol,
            limit=config.ORACLE_LIMIT if limit is None else limit,
        )

    @property
    def alpha(self) -> float:
        return self.params.alpha

    def p(self, t: float, x, y):
        return skew_density_p(t, x, y, self.alpha)

    def q(self, t: float, x, y):
        return skew_diffusion_density_q(t, x, y, self.params)

    def expectation(
        self,
        t: float,
        x: float,
        func: Callable[[float], float],
        support: tuple[float, float] = (-math.inf, math.inf),
    ) -> float:
        """Integral of func(y) q(t, x, y) dy over ``support``."""
        _check_time(t)
        sp, alpha = self.params, self.alpha
        windows = integration_windows(t, x, sp, support)
        if not windows:
            return 0.0
        return _integrate(
            lambda y: func(y) * _q_scalar(t, x, y, sp, alpha), windows, self.tol, self.limit
        )

    def total(self, t: float, x: float) -> float:
        return self.expectation(t, x, lambda y: 1.0)


def total_probability(
    t: float,
    x: float,
    sp: SkewParameters,
    tol: float | None = None,
    limit: int | None = None,
) -> float:
    """Integral of q(t, x, .) over the real line."""
    density = SkewDensity(
        sp,
        tol=config.ORACLE_TOL if tol is None else tol,
        limit=config.ORACLE_LIMIT if limit is None else limit,
    )
    return density.total(t, x)


def exact_solution_u(
    problem: InterfaceProblem,
    t: float,
    x: float,
    tol: float | None = None,
    limit: int | None = None,
    density: SkewDensity | None = None,
) -> float:
    """Reference value u(t, x) = integral of u0(y) q(t, x, y) dy.

    t = 0 returns u0(x). Raises OracleError when the quadrature misses its
    tolerance and ValueError for t < 0. A prebuilt ``density`` overrides
    ``tol`` and ``limit``.
    """
    if t < 0:
        raise ValueError(f"Evaluation time must be nonnegative, got {t}")
    u0 = problem.u0
    if t == 0:
        return float(u0(x))

    density = density or SkewDensity.for_problem(problem, tol, limit)
    support = getattr(u0, "support", (-math.inf, math.inf))

    func = getattr(u0, "func", None)
    if func is not None:
        def value(y: float) -> float:
            return float(func(np.float64(y)))
    else:
        def value(y: float) -> float:
            return float(u0(y))

    return density.expectation(t, float(x), value, support)


class ExactSolution:
    """Vectorised, memoised wrapper around ``exact_solution_u`` for one problem."""

    def __init__(self, problem: InterfaceProblem, tol: float | None = None):
        self.problem = validate_problem(problem)
        self.density = SkewDensity.for_problem(problem, tol)
        self._cache: dict[tuple[float, float], float] = {}

    def __call__(self, t: float, x):
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        values = np.empty(arr.shape)
        for i, xi in enumerate(arr.flat):
            key = (float(t), float(xi))
            cached = self._cache.get(key)
            if cached is None:
                cached = exact_solution_u(self.problem, t, xi, density=self.density)
                self._cache[key] = cached
            values.flat[i] = cached
        if np.ndim(x) == 0:
            return float(values[0])
        return values
