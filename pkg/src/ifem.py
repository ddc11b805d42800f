"""Immersed linear finite elements and theta-scheme time stepping.

The mesh is uniform on [-L, L] with homogeneous Dirichlet boundaries and is
built without regard to the interface. When x = 0 falls strictly inside an
element, the two basis functions of that element are replaced by piecewise
linear functions that are continuous at 0 and satisfy the flux condition
kappa- * phi'(0-) = kappa+ * phi'(0+). When x = 0 is a node, standard hat
functions with element-wise coefficients are used.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import wraps
from typing import ParamSpec, TypeVar

import numpy as np

from config import GAUSS_ORDER
from src.problem import (
    InitialProfile,
    InterfaceProblem,
    SymmetrizedCoefficients,
    symmetrize,
    validate_problem,
)
from src.tridiag import ThomasFactorization, TridiagonalSystem, thomas_solve

logger = logging.getLogger(__name__)

P = ParamSpec("P")
T = TypeVar("T")

# Relative distance below which the interface counts as sitting on a node
NODE_TOLERANCE = 1e-12


class SolverError(RuntimeError):
    """Raised when the finite element solver cannot proceed."""
    pass


def handle_solver_errors(func: Callable[P, T]) -> Callable[P, T]:
    """Decorator turning numerical breakdowns into SolverError with logging."""
    @wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> T:
        try:
            return func(*args, **kwargs)
        except SolverError:
            raise
        except (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError) as e:
            logger.error(f"Numerical failure in {func.__name__}: {type(e).__name__}: {e}")
            raise SolverError(f"{func.__name__} failed: {e}") from e
    return wrapper


@dataclass(frozen=True, eq=False)
class Mesh1D:
    half_width_L: float
    n_elements: int
    h: float
    nodes: np.ndarray
    interface_element: int | None
    interface_node: int | None

    @property
    def node_aligned(self) -> bool:
        return self.interface_node is not None

    def element_of(self, x: np.ndarray) -> np.ndarray:
        """Index of the element containing each x (left-closed elements)."""
        idx = np.searchsorted(self.nodes, x, side="right") - 1
        return np.clip(idx, 0, self.n_elements - 1)


@dataclass(frozen=True)
class IfeBasisLocal:
    """The two basis functions of the interface element.

    Index 0 is tied to the left node, index 1 to the right node. Each
    function is linear on [x_left, xi] with slope ``slopes_minus[i]`` and on
    [xi, x_right] with slope ``slopes_plus[i]``, taking the value
    ``interface_values[i]`` at xi.
    """

    element: int
    x_left: float
    x_right: float
    xi: float
    slopes_minus: tuple[float, float]
    slopes_plus: tuple[float, float]
    interface_values: tuple[float, float]

    @property
    def d_minus(self) -> float:
        return self.xi - self.x_left

    @property
    def d_plus(self) -> float:
        return self.x_right - self.xi

    def evaluate(self, which: int, x):
        x = np.asarray(x, dtype=float)
        v = self.interface_values[which]
        left = v + self.slopes_minus[which] * (x - self.xi)
        right = v + self.slopes_plus[which] * (x - self.xi)
        return np.where(x <= self.xi, left, right)

    def flux_residual(self, which: int, kappa_minus: float, kappa_plus: float) -> float:
        return kappa_plus * self.slopes_plus[which] - kappa_minus * self.slopes_minus[which]

    def continuity_residual(self, which: int) -> float:
        """Mismatch of the two pieces at xi, measured from the element ends."""
        from_left = (1.0 if which == 0 else 0.0) + self.slopes_minus[which] * self.d_minus
        from_right = (0.0 if which == 0 else 1.0) - self.slopes_plus[which] * self.d_plus
        return from_left - from_right


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    mesh: Mesh1D
    basis: IfeBasisLocal | None
    coeffs: SymmetrizedCoefficients
    theta: float
    delta_t: float
    times: np.ndarray
    coefficients: np.ndarray = field(repr=False)
    startup_steps: int = 0

    @property
    def n_steps(self) -> int:
        return self.coefficients.shape[0] - 1

    @property
    def final(self) -> np.ndarray:
        return self.coefficients[-1]


@handle_solver_errors
def build_mesh(half_width_L: float, n_elements: int) -> Mesh1D:
    """Uniform mesh of [-L, L] with ``n_elements`` elements."""
    if n_elements < 2:
        raise SolverError(f"Mesh needs at least 2 elements, got {n_elements}")
    if not half_width_L > 0:
        raise SolverError(f"Half-width must be positive, got {half_width_L}")

    h = 2.0 * half_width_L / n_elements
    nodes = -half_width_L + h * np.arange(n_elements + 1)
    nodes[-1] = half_width_L

    interface_node = None
    interface_element = None
    nearest = int(np.argmin(np.abs(nodes)))
    if abs(nodes[nearest]) <= NODE_TOLERANCE * h:
        nodes[nearest] = 0.0
        interface_node = nearest
    else:
        interface_element = int(np.searchsorted(nodes, 0.0, side="right") - 1)

    logger.debug(
        f"Built mesh: L={half_width_L}, N={n_elements}, h={h}, "
        f"interface {'node ' + str(interface_node) if interface_node is not None else 'element ' + str(interface_element)}"
    )
    return Mesh1D(
        half_width_L=half_width_L,
        n_elements=n_elements,
        h=h,
        nodes=nodes,
        interface_element=interface_element,
        interface_node=interface_node,
    )


def build_mesh_with_step(half_width_L: float, h: float) -> Mesh1D:
    """Mesh with step ``h``; 2L must be an integer multiple of h."""
    n_elements = int(round(2.0 * half_width_L / h))
    if n_elements < 2 or abs(n_elements * h - 2.0 * half_width_L) > 1e-9 * half_width_L:
        raise SolverError(f"Step h={h} does not divide the domain [-{half_width_L}, {half_width_L}]")
    return build_mesh(half_width_L, n_elements)


def interface_basis_on(
    x_left: float,
    x_right: float,
    kappa_minus: float,
    kappa_plus: float,
    xi: float = 0.0,
    element: int = -1,
) -> IfeBasisLocal:
    """IFE basis on [x_left, x_right] with the interface at ``xi``.

    Solves continuity at xi, the flux condition and the nodal conditions in
    closed form. For the left-node function:
        s+ = -kappa- / den,  s- = -kappa+ / den,  den = kappa- d+ + kappa+ d-
    The right-node function is one minus the left-node function.
    """
    if not x_right > x_left:
        raise SolverError(f"Degenerate element [{x_left}, {x_right}]")
    if not x_left < xi < x_right:
        raise SolverError(f"Interface {xi} is not strictly inside [{x_left}, {x_right}]")

    d_minus = xi - x_left
    d_plus = x_right - xi
    den = kappa_minus * d_plus + kappa_plus * d_minus

    left_minus = -kappa_plus / den
    left_plus = -kappa_minus / den
    left_value = kappa_minus * d_plus / den

    return IfeBasisLocal(
        element=element,
        x_left=x_left,
        x_right=x_right,
        xi=xi,
        slopes_minus=(left_minus, -left_minus),
        slopes_plus=(left_plus, -left_plus),
        interface_values=(left_value, kappa_plus * d_minus / den),
    )


def interface_basis(mesh: Mesh1D, kappa_minus: float, kappa_plus: float) -> IfeBasisLocal:
    if mesh.node_aligned:
        raise SolverError("Interface sits on a node; standard hat functions apply")
    j = mesh.interface_element
    return interface_basis_on(
        float(mesh.nodes[j]), float(mesh.nodes[j + 1]), kappa_minus, kappa_plus, 0.0, element=j
    )


def build_basis(mesh: Mesh1D, coeffs: SymmetrizedCoefficients) -> IfeBasisLocal | None:
    """Interface basis for ``mesh``, or None when standard hats suffice."""
    if mesh.node_aligned:
        return None
    return interface_basis(mesh, coeffs.kappa_minus, coeffs.kappa_plus)


def _linear_product_integral(length: float, p: tuple[float, float], q: tuple[float, float]) -> float:
    """Exact integral of the product of two linear functions over an interval."""
    return length / 6.0 * (2.0 * p[0] * q[0] + p[0] * q[1] + p[1] * q[0] + 2.0 * p[1] * q[1])


def _interface_element_matrices(
    basis: IfeBasisLocal,
    c_minus: float,
    c_plus: float,
    kappa_minus: float,
    kappa_plus: float,
) -> tuple[np.ndarray, np.ndarray]:
    d_minus, d_plus = basis.d_minus, basis.d_plus
    v = basis.interface_values
    # Values at (x_left, xi) and (xi, x_right) for each basis function
    minus_piece = ((1.0, v[0]), (0.0, v[1]))
    plus_piece = ((v[0], 0.0), (v[1], 1.0))

    mass = np.empty((2, 2))
    stiffness = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            mass[i, j] = c_minus * _linear_product_integral(
                d_minus, minus_piece[i], minus_piece[j]
            ) + c_plus * _linear_product_integral(d_plus, plus_piece[i], plus_piece[j])
            stiffness[i, j] = (
                kappa_minus * d_minus * basis.slopes_minus[i] * basis.slopes_minus[j]
                + kappa_plus * d_plus * basis.slopes_plus[i] * basis.slopes_plus[j]
            )
    return mass, stiffness


def _element_sides(mesh: Mesh1D) -> np.ndarray:
    midpoints = 0.5 * (mesh.nodes[:-1] + mesh.nodes[1:])
    return midpoints > 0.0


def _assemble_interior(
    mesh: Mesh1D,
    diag_left: np.ndarray,
    diag_right: np.ndarray,
    off: np.ndarray,
    role: str,
) -> TridiagonalSystem:
    """Gather element 2x2 blocks [[a, b], [b, d]] and drop the Dirichlet rows."""
    n = mesh.n_elements
    main_full = np.zeros(n + 1)
    main_full[:-1] += diag_left
    main_full[1:] += diag_right

    main = main_full[1:n]
    lower = np.zeros(n - 1)
    upper = np.zeros(n - 1)
    # off[e] couples nodes e and e+1; interior node k is global node k+1
    lower[1:] = off[1 : n - 1]
    upper[:-1] = off[1 : n - 1]
    return TridiagonalSystem(lower=lower, main=main, upper=upper, role=role)


def assemble_mass(
    mesh: Mesh1D, basis: IfeBasisLocal | None, c_minus: float, c_plus: float
) -> TridiagonalSystem:
    """Mass matrix weighted by the piecewise constant c."""
    plus = _element_sides(mesh)
    c = np.where(plus, c_plus, c_minus)
    diag = c * mesh.h / 3.0
    diag_left, diag_right = diag.copy(), diag.copy()
    off = c * mesh.h / 6.0
    if basis is not None:
        local, _ = _interface_element_matrices(basis, c_minus, c_plus, 1.0, 1.0)
        j = basis.element
        diag_left[j], diag_right[j], off[j] = local[0, 0], local[1, 1], local[0, 1]
    return _assemble_interior(mesh, diag_left, diag_right, off, role="mass")


def assemble_stiffness(
    mesh: Mesh1D, basis: IfeBasisLocal | None, kappa_minus: float, kappa_plus: float
) -> TridiagonalSystem:
    """Stiffness matrix weighted by the piecewise constant kappa."""
    plus = _element_sides(mesh)
    kappa = np.where(plus, kappa_plus, kappa_minus)
    diag = kappa / mesh.h
    diag_left, diag_right = diag.copy(), diag.copy()
    off = -kappa / mesh.h
    if basis is not None:
        _, local = _interface_element_matrices(basis, 1.0, 1.0, kappa_minus, kappa_plus)
        j = basis.element
        diag_left[j], diag_right[j], off[j] = local[0, 0], local[1, 1], local[0, 1]
    return _assemble_interior(mesh, diag_left, diag_right, off, role="stiffness")


def assemble(
    mesh: Mesh1D, basis: IfeBasisLocal | None, coeffs: SymmetrizedCoefficients
) -> tuple[TridiagonalSystem, TridiagonalSystem]:
    """Mass matrix weighted by c and stiffness matrix weighted by kappa."""
    mass = assemble_mass(mesh, basis, coeffs.c_minus, coeffs.c_plus)
    stiffness = assemble_stiffness(mesh, basis, coeffs.kappa_minus, coeffs.kappa_plus)
    return mass, stiffness


def _shape_values(mesh: Mesh1D, basis: IfeBasisLocal | None, e: int, x: np.ndarray):
    """Values of the two shape functions of element ``e`` at points x."""
    if basis is not None and e == basis.element:
        return basis.evaluate(0, x), basis.evaluate(1, x)
    t = (x - mesh.nodes[e]) / mesh.h
    return 1.0 - t, t


@handle_solver_errors
def load_vector(
    mesh: Mesh1D,
    basis: IfeBasisLocal | None,
    u0: InitialProfile,
    order: int = GAUSS_ORDER,
) -> np.ndarray:
    """b_i = integral of u0 * phi_i over all nodes, by Gauss-Legendre quadrature.

    Each element is split at the interface and at the support endpoints of u0
    so that the integrand is smooth on every piece.
    """
    gauss_x, gauss_w = np.polynomial.legendre.leggauss(order)
    lo, hi = getattr(u0, "support", (-math.inf, math.inf))
    b = np.zeros(mesh.n_elements + 1)

    first = 0 if lo <= mesh.nodes[0] else int(mesh.element_of(lo))
    last = mesh.n_elements - 1 if hi >= mesh.nodes[-1] else int(mesh.element_of(hi))
    for e in range(first, last + 1):
        x_left, x_right = mesh.nodes[e], mesh.nodes[e + 1]
        cuts = {x_left, x_right}
        for point in (lo, hi, 0.0):
            if x_left < point < x_right:
                cuts.add(point)
        cuts = sorted(cuts)

        for a, c in zip(cuts[:-1], cuts[1:]):
            half = 0.5 * (c - a)
            x = 0.5 * (a + c) + half * gauss_x
            values = np.asarray(u0(x), dtype=float)
            if not np.all(np.isfinite(values)):
                logger.warning(f"Initial profile is not finite on [{a}, {c}]")
                raise SolverError(f"u0 returned non-finite values on [{a}, {c}]")
            phi_left, phi_right = _shape_values(mesh, basis, e, x)
            b[e] += half * np.sum(gauss_w * values * phi_left)
            b[e + 1] += half * np.sum(gauss_w * values * phi_right)
    return b


@handle_solver_errors
def l2_project_initial(
    mesh: Mesh1D,
    basis: IfeBasisLocal | None,
    u0: InitialProfile,
    unweighted_mass: TridiagonalSystem | None = None,
) -> np.ndarray:
    """Unweighted L2 projection of u0 onto the IFE space.

    Returns the nodal coefficients on all N+1 nodes; the boundary entries are 0.
    """
    if unweighted_mass is None:
        unweighted_mass = assemble_mass(mesh, basis, 1.0, 1.0)
    b = load_vector(mesh, basis, u0)

    coefficients = np.zeros(mesh.n_elements + 1)
    coefficients[1:-1] = thomas_solve(unweighted_mass, b[1:-1])
    return coefficients


def _stable_step_estimate(mass: TridiagonalSystem, stiffness: TridiagonalSystem, theta: float) -> float:
    """Largest step for which a theta < 1/2 scheme stays stable, via Gershgorin."""
    mass_low, _ = mass.gershgorin_bounds()
    _, stiff_high = stiffness.gershgorin_bounds()
    lambda_max = stiff_high / mass_low
    return 2.0 / ((1.0 - 2.0 * theta) * lambda_max)


@handle_solver_errors
def theta_scheme_solve(
    problem: InterfaceProblem,
    mesh: Mesh1D,
    theta: float,
    delta_t: float,
    startup_steps: int = 0,
) -> DiscreteSolution:
    """Advance the IFE semi-discretisation to the final time with a theta-scheme.

    Each step solves (M + theta dt K) u^k = (M - (1 - theta) dt K) u^{k-1}.
    theta = 1 is backward Euler, 1/2 Crank-Nicolson and 0 forward Euler.
    The step is shortened so that it divides the final time exactly.

    The first ``startup_steps`` steps are each replaced by two backward Euler
    half-steps (Rannacher start-up). This damps the high-frequency error modes
    that Crank-Nicolson carries undamped when dt is large compared to h^2.
    Only the full-step levels are stored.
    """
    validate_problem(problem)
    if not 0.0 <= theta <= 1.0:
        raise SolverError(f"theta must lie in [0, 1], got {theta}")
    if not delta_t > 0:
        raise SolverError(f"Time step must be positive, got {delta_t}")
    if startup_steps < 0:
        raise SolverError(f"startup_steps must be nonnegative, got {startup_steps}")
    if abs(mesh.half_width_L - problem.half_width_L) > 1e-12 * problem.half_width_L:
        raise SolverError(
            f"Mesh covers [-{mesh.half_width_L}, {mesh.half_width_L}] but the problem "
            f"is posed on [-{problem.half_width_L}, {problem.half_width_L}]"
        )

    final_time = problem.final_time_T
    n_steps = max(1, math.ceil(final_time / delta_t - 1e-9))
    dt = final_time / n_steps
    startup_steps = min(startup_steps, n_steps)

    coeffs = symmetrize(problem)
    basis = build_basis(mesh, coeffs)
    mass, stiffness = assemble(mesh, basis, coeffs)

    if theta < 0.5:
        dt_stable = _stable_step_estimate(mass, stiffness, theta)
        if dt > dt_stable:
            logger.warning(
                f"theta={theta} with dt={dt:.3e} exceeds the stability estimate {dt_stable:.3e}; "
                f"the solution may blow up"
            )

    lhs = mass.combine(stiffness, 1.0, theta * dt, role="lhs")
    rhs = mass.combine(stiffness, 1.0, -(1.0 - theta) * dt, role="rhs")
    factor = ThomasFactorization(lhs)

    coefficients = np.zeros((n_steps + 1, mesh.n_elements + 1))
    coefficients[0] = l2_project_initial(mesh, basis, problem.u0)
    interior = coefficients[0, 1:-1]

    if startup_steps:
        # M + dt/2 K is the Crank-Nicolson matrix itself
        half_factor = factor if theta == 0.5 else ThomasFactorization(
            mass.combine(stiffness, 1.0, 0.5 * dt, role="startup")
        )
        for k in range(1, startup_steps + 1):
            for _ in range(2):
                interior = half_factor.solve(mass.matvec(interior))
            coefficients[k, 1:-1] = interior
        logger.debug(f"Start-up: {startup_steps} step(s) as backward Euler half-steps")

    for k in range(startup_steps + 1, n_steps + 1):
        interior = factor.solve(rhs.matvec(interior))
        coefficients[k, 1:-1] = interior

    if not np.all(np.isfinite(coefficients[-1])):
        raise SolverError(f"Non-finite solution after {n_steps} steps (theta={theta}, dt={dt})")

    logger.info(
        f"theta-scheme finished: theta={theta}, h={mesh.h:.4g}, dt={dt:.4g}, steps={n_steps}"
    )
    return DiscreteSolution(
        mesh=mesh,
        basis=basis,
        coeffs=coeffs,
        theta=theta,
        delta_t=dt,
        times=dt * np.arange(n_steps + 1),
        coefficients=coefficients,
        startup_steps=startup_steps,
    )


def evaluate_uh(sol: DiscreteSolution, t_index: int, x):
    """Evaluate the IFE expansion at time level ``t_index`` and points x."""
    mesh = sol.mesh
    arr = np.asarray(x, dtype=float)
    lo, hi = mesh.nodes[0], mesh.nodes[-1]
    if np.any((arr < lo) | (arr > hi)):
        raise ValueError(f"Evaluation points must lie in [{lo}, {hi}]")

    a = sol.coefficients[t_index]
    e = mesh.element_of(arr)
    x_left = mesh.nodes[e]
    t = (arr - x_left) / mesh.h
    values = a[e] * (1.0 - t) + a[e + 1] * t

    basis = sol.basis
    if basis is not None:
        inside = e == basis.element
        if np.any(inside):
            j = basis.element
            values = np.where(
                inside,
                a[j] * basis.evaluate(0, arr) + a[j + 1] * basis.evaluate(1, arr),
                values,
            )

    values = np.where(arr == x_left, a[e], values)
    values = np.where(arr == hi, a[-1], values)
    if np.ndim(x) == 0:
        return float(values)
    return values


def weighted_norm_squared(sol: DiscreteSolution, t_index: int, mass: TridiagonalSystem) -> float:
    """(u^k)^T M u^k on the interior nodes."""
    interior = sol.coefficients[t_index, 1:-1]
    return float(interior @ mass.matvec(interior))
