"""Interface problem definition and the lambda/alpha/beta transform algebra.

Every solver in the package works from an ``InterfaceProblem``: the two
diffusion coefficients, the interface parameter lambda, the initial profile
and the computational horizon. The helpers here derive the symmetrized
coefficients used by the finite element route and the skew parameters used
by the stochastic and analytic routes.

The point x = 0 always belongs to the minus side (left-closed branch).
"""

import logging
import math
import numbers
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class ProblemValidationError(ValueError):
    """Raised when an interface problem violates one of its invariants."""

    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


def _like_input(values: np.ndarray, x) -> float | np.ndarray:
    """Return a float for scalar input, an array otherwise."""
    if np.ndim(x) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class InitialProfile:
    """Initial condition u0 together with its declared support.

    ``func`` must accept numpy arrays. The support is the closed interval
    outside of which u0 vanishes; use infinite bounds for profiles that are
    not compactly supported.
    """

    func: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float] = (-1.0, 1.0)
    name: str = "custom"

    def __call__(self, x):
        values = np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)
        return _like_input(values, x)


def _bump(x: np.ndarray) -> np.ndarray:
    inside = np.abs(x) < 1.0
    return np.where(inside, (1.0 - x * x) ** 5, 0.0)


def bump_profile() -> InitialProfile:
    """The default profile (1 - x^2)^5 on |x| < 1, zero elsewhere."""
    return InitialProfile(func=_bump, support=(-1.0, 1.0), name="bump")


def constant_profile(value: float = 1.0) -> InitialProfile:
    """Constant profile; only meaningful for Monte Carlo mechanics checks."""

    def _constant(x: np.ndarray) -> np.ndarray:
        return np.full(np.shape(x), float(value))

    return InitialProfile(func=_constant, support=(-math.inf, math.inf), name=f"constant({value})")


@dataclass(frozen=True)
class InterfaceProblem:
    d_plus: float
    d_minus: float
    lam: float
    u0: InitialProfile = field(default_factory=bump_profile)
    half_width_L: float = 10.0
    final_time_T: float = 0.2


@dataclass(frozen=True)
class SymmetrizedCoefficients:
    c_plus: float
    c_minus: float
    kappa_plus: float
    kappa_minus: float
    rho: float


@dataclass(frozen=True)
class SkewParameters:
    alpha: float
    sigma_plus: float
    sigma_minus: float
    theta_plus: float
    theta_minus: float


@dataclass(frozen=True)
class ErrorConstants:
    """Constants appearing in the finite element error bounds. Diagnostics only."""

    rho: float
    alpha_1: float
    alpha_3: float
    alpha_4: float
    alpha_5: float

    def as_dict(self) -> dict[str, float]:
        return {
            "rho": self.rho,
            "alpha_1": self.alpha_1,
            "alpha_3": self.alpha_3,
            "alpha_4": self.alpha_4,
            "alpha_5": self.alpha_5,
        }


def _require_positive(value: float, name: str) -> None:
    if not (isinstance(value, numbers.Real) and math.isfinite(value) and value > 0):
        raise ProblemValidationError(name, f"{name} must be positive, got {value!r}")


def validate_problem(p: InterfaceProblem) -> InterfaceProblem:
    """Check every invariant of ``p`` and return it unchanged.

    Raises:
        ProblemValidationError: naming the first violated field.
    """
    _require_positive(p.d_plus, "d_plus")
    _require_positive(p.d_minus, "d_minus")
    _require_positive(p.final_time_T, "final_time_T")
    _require_positive(p.half_width_L, "half_width_L")

    lam = p.lam
    if not (isinstance(lam, numbers.Real) and math.isfinite(lam) and 0.0 < lam < 1.0):
        raise ProblemValidationError(
            "lambda", f"lambda out of open interval (0, 1): got {lam!r}"
        )

    if not callable(p.u0):
        raise ProblemValidationError("u0", "u0 must be callable")
    support = getattr(p.u0, "support", None)
    if support is not None and not support[0] < support[1]:
        raise ProblemValidationError("u0", f"u0 support must be a nonempty interval, got {support}")

    logger.debug(
        f"Validated problem: D+={p.d_plus}, D-={p.d_minus}, lambda={lam}, "
        f"L={p.half_width_L}, T={p.final_time_T}"
    )
    return p


def lambda_star(d_plus: float, d_minus: float) -> float:
    """Interface parameter giving continuity of flux, D+/(D+ + D-)."""
    return d_plus / (d_plus + d_minus)


def lambda_sharp() -> float:
    """Interface parameter giving continuity of derivatives."""
    return 0.5


LAMBDA_STAR_TOKEN = "lambda-star"
LAMBDA_SHARP_TOKEN = "lambda-sharp"


def resolve_lambda(value: float | str, d_plus: float, d_minus: float) -> float:
    """Turn a number or one of the symbolic lambda tokens into a float.

    Raises:
        ProblemValidationError: for unknown tokens or unparsable text.
    """
    if isinstance(value, str):
        token = value.strip().lower()
        if token == LAMBDA_STAR_TOKEN:
            return lambda_star(d_plus, d_minus)
        if token == LAMBDA_SHARP_TOKEN:
            return lambda_sharp()
        try:
            return float(token)
        except ValueError:
            raise ProblemValidationError(
                "lambda",
                f"lambda must be a number, '{LAMBDA_STAR_TOKEN}' or '{LAMBDA_SHARP_TOKEN}', got {value!r}",
            ) from None
    return float(value)


def symmetrize(p: InterfaceProblem) -> SymmetrizedCoefficients:
    """Coefficients c and kappa of the self-adjoint form c u_t = (kappa u_x)_x."""
    c_plus = p.lam / p.d_plus
    c_minus = (1.0 - p.lam) / p.d_minus
    kappa_plus = p.lam / 2.0
    kappa_minus = (1.0 - p.lam) / 2.0
    rho = max(kappa_minus / kappa_plus, kappa_plus / kappa_minus)
    return SymmetrizedCoefficients(
        c_plus=c_plus,
        c_minus=c_minus,
        kappa_plus=kappa_plus,
        kappa_minus=kappa_minus,
        rho=rho,
    )


def alpha_of_lambda(p: InterfaceProblem) -> SkewParameters:
    """Skewness of the underlying skew Brownian motion and the volatilities."""
    sigma_plus = math.sqrt(p.d_plus)
    sigma_minus = math.sqrt(p.d_minus)
    # theta = beta'(x) sqrt(D(x)) taken on each side of the interface
    theta_plus = beta_left_derivative(1.0, p.lam) * sigma_plus
    theta_minus = beta_left_derivative(0.0, p.lam) * sigma_minus
    alpha = theta_minus / (theta_minus + theta_plus)
    return SkewParameters(
        alpha=alpha,
        sigma_plus=sigma_plus,
        sigma_minus=sigma_minus,
        theta_plus=theta_plus,
        theta_minus=theta_minus,
    )


def beta_forward(x, lam: float):
    """beta(x) = lam*x for x <= 0 and (1 - lam)*x for x > 0."""
    arr = np.asarray(x, dtype=float)
    return _like_input(np.where(arr <= 0.0, lam * arr, (1.0 - lam) * arr), x)


def beta_inverse(y, lam: float):
    arr = np.asarray(y, dtype=float)
    return _like_input(np.where(arr <= 0.0, arr / lam, arr / (1.0 - lam)), y)


def beta_left_derivative(x, lam: float):
    arr = np.asarray(x, dtype=float)
    return _like_input(np.where(arr <= 0.0, lam, 1.0 - lam), x)


def theta_coefficient(x, sp: SkewParameters):
    """Volatility of the transformed process; minus branch at x = 0."""
    arr = np.asarray(x, dtype=float)
    return _like_input(np.where(arr <= 0.0, sp.theta_minus, sp.theta_plus), x)


def sqrt_diffusion(x, sp: SkewParameters):
    """sqrt(D(x)) with the minus branch at x = 0."""
    if np.ndim(x) == 0:
        return sp.sigma_minus if x <= 0.0 else sp.sigma_plus
    arr = np.asarray(x, dtype=float)
    return np.where(arr <= 0.0, sp.sigma_minus, sp.sigma_plus)


def mirror_problem(p: InterfaceProblem) -> InterfaceProblem:
    """Reflect the problem through x = 0: swap sides, lambda -> 1 - lambda."""
    original = p.u0
    lo, hi = original.support

    def _reflected(x: np.ndarray) -> np.ndarray:
        return original.func(-x)

    u0 = InitialProfile(func=_reflected, support=(-hi, -lo), name=f"mirror({original.name})")
    return InterfaceProblem(
        d_plus=p.d_minus,
        d_minus=p.d_plus,
        lam=1.0 - p.lam,
        u0=u0,
        half_width_L=p.half_width_L,
        final_time_T=p.final_time_T,
    )


def local_time_drift(p: InterfaceProblem) -> float:
    """Coefficient of the local-time term that the beta transform removes."""
    sp = alpha_of_lambda(p)
    return (sp.sigma_plus - sp.sigma_minus) / 2.0 + sp.sigma_minus * (2.0 * sp.alpha - 1.0) / (
        2.0 * sp.alpha
    )


def error_constants(coeffs: SymmetrizedCoefficients, n_steps: int = 1) -> ErrorConstants:
    c_max = max(coeffs.c_plus, coeffs.c_minus)
    c_min = min(coeffs.c_plus, coeffs.c_minus)
    alpha_1 = c_max / c_min
    alpha_3 = math.sqrt(c_max) / math.sqrt(c_min)
    try:
        alpha_4 = alpha_3 ** max(n_steps - 1, 0)
    except OverflowError:
        alpha_4 = math.inf
    alpha_5 = math.sqrt(max(coeffs.kappa_plus, coeffs.kappa_minus)) / math.sqrt(c_min)
    return ErrorConstants(
        rho=coeffs.rho,
        alpha_1=alpha_1,
        alpha_3=alpha_3,
        alpha_4=alpha_4,
        alpha_5=alpha_5,
    )


def suggested_half_width(
    d_plus: float,
    d_minus: float,
    final_time: float,
    window: float = 5.0,
    support: float = 1.0,
    minimum: float = 10.0,
) -> float:
    """Domain half-width keeping Dirichlet-boundary effects out of the window.

    The image of the boundary seen from the window edge sits at least seven
    diffusion lengths away, which makes its contribution below e^-24.
    """
    spread = 7.0 * math.sqrt(max(d_plus, d_minus) * final_time)
    return float(max(minimum, math.ceil((window + support + spread) / 2.0)))
