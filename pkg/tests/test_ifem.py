"""Tests for the immersed finite element discretisation and theta-scheme."""

import logging
import math

import numpy as np
import pytest

from src.ifem import (
    DiscreteSolution,
    SolverError,
    assemble,
    assemble_mass,
    build_basis,
    build_mesh,
    build_mesh_with_step,
    evaluate_uh,
    handle_solver_errors,
    interface_basis,
    interface_basis_on,
    l2_project_initial,
    theta_scheme_solve,
    weighted_norm_squared,
)
from src.oracle import exact_solution_u
from src.problem import InitialProfile, InterfaceProblem, bump_profile, symmetrize


def _standard_fem(mesh, c, kappa):
    """Constant-coefficient linear FEM on the interior nodes, assembled densely."""
    n = mesh.n_elements
    mass = np.zeros((n + 1, n + 1))
    stiffness = np.zeros((n + 1, n + 1))
    h = mesh.h
    for e in range(n):
        idx = [e, e + 1]
        mass[np.ix_(idx, idx)] += c * h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        stiffness[np.ix_(idx, idx)] += kappa / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return mass[1:-1, 1:-1], stiffness[1:-1, 1:-1]


class TestBuildMesh:
    """Test cases for build_mesh."""

    def test_two_elements_node_aligned(self):
        """Test L=1, N=2 puts the interface on the middle node."""
        mesh = build_mesh(1.0, 2)
        np.testing.assert_allclose(mesh.nodes, [-1.0, 0.0, 1.0])
        assert mesh.node_aligned
        assert mesh.interface_node == 1
        assert mesh.interface_element is None

    def test_four_elements_node_aligned(self):
        """Test L=1, N=4."""
        mesh = build_mesh(1.0, 4)
        np.testing.assert_allclose(mesh.nodes, [-1.0, -0.5, 0.0, 0.5, 1.0])
        assert mesh.interface_node == 2

    def test_interface_inside_element(self):
        """Test L=1.25, N=5 places 0 inside [-0.25, 0.25]."""
        mesh = build_mesh(1.25, 5)
        assert mesh.h == pytest.approx(0.5)
        assert not mesh.node_aligned
        j = mesh.interface_element
        assert mesh.nodes[j] == pytest.approx(-0.25)
        assert mesh.nodes[j + 1] == pytest.approx(0.25)

    def test_too_few_elements_rejected(self):
        """Test that N < 2 is rejected."""
        with pytest.raises(SolverError):
            build_mesh(1.0, 1)

    def test_step_must_divide_domain(self):
        """Test build_mesh_with_step for good and bad steps."""
        assert build_mesh_with_step(10.0, 0.025).n_elements == 800
        with pytest.raises(SolverError):
            build_mesh_with_step(1.0, 0.3)


class TestInterfaceBasis:
    """Test cases for the interface element basis."""

    def test_hand_computed_example(self):
        """Test element [-0.25, 0.75] with kappa+ = 2 kappa-."""
        basis = interface_basis_on(-0.25, 0.75, 1.0, 2.0)

        assert basis.slopes_minus[0] == pytest.approx(-1.6)
        assert basis.slopes_plus[0] == pytest.approx(-0.8)
        assert basis.interface_values[0] == pytest.approx(0.6)
        assert basis.slopes_minus[1] == pytest.approx(1.6)
        assert basis.slopes_plus[1] == pytest.approx(0.8)
        assert basis.interface_values[1] == pytest.approx(0.4)

    def test_equal_kappa_gives_hats(self):
        """Test that without a jump the basis reduces to hat functions."""
        basis = interface_basis_on(-0.3, 0.2, 0.7, 0.7)
        h = 0.5
        assert basis.slopes_minus[0] == pytest.approx(-1.0 / h)
        assert basis.slopes_plus[0] == pytest.approx(-1.0 / h)
        assert basis.interface_values[0] == pytest.approx(0.4)

    def test_random_draws_satisfy_interface_conditions(self):
        """Test continuity and flux conditions for 50 random configurations."""
        rng = np.random.default_rng(2024)
        for _ in range(50):
            k_minus, k_plus = rng.uniform(0.01, 10.0, 2)
            xi = rng.uniform(-1.0, 1.0)
            x_left = xi - rng.uniform(0.01, 1.0)
            x_right = xi + rng.uniform(0.01, 1.0)
            basis = interface_basis_on(x_left, x_right, k_minus, k_plus, xi=xi)

            for which in (0, 1):
                scale = max(abs(k_minus * basis.slopes_minus[which]), 1.0)
                assert abs(basis.continuity_residual(which)) <= 1e-13
                assert abs(basis.flux_residual(which, k_minus, k_plus)) <= 1e-13 * scale

    def test_nodal_values_and_partition_of_unity(self):
        """Test nodal values and that the two functions sum to one."""
        basis = interface_basis_on(-0.25, 0.75, 1.0, 3.0)
        assert basis.evaluate(0, -0.25) == pytest.approx(1.0)
        assert basis.evaluate(0, 0.75) == pytest.approx(0.0, abs=1e-15)
        assert basis.evaluate(1, -0.25) == pytest.approx(0.0, abs=1e-15)
        assert basis.evaluate(1, 0.75) == pytest.approx(1.0)

        xs = np.linspace(-0.25, 0.75, 41)
        np.testing.assert_allclose(basis.evaluate(0, xs) + basis.evaluate(1, xs), 1.0, rtol=1e-14)

    def test_interface_must_be_inside(self):
        """Test that a degenerate or non-straddling element is rejected."""
        with pytest.raises(SolverError):
            interface_basis_on(0.5, 0.5, 1.0, 1.0)
        with pytest.raises(SolverError):
            interface_basis_on(0.1, 0.5, 1.0, 1.0)

    def test_node_aligned_mesh_has_no_interface_basis(self):
        """Test that node-aligned meshes bypass the interface basis."""
        mesh = build_mesh(1.0, 4)
        with pytest.raises(SolverError):
            interface_basis(mesh, 1.0, 2.0)


class TestAssemble:
    """Test cases for mass and stiffness assembly."""

    @pytest.mark.parametrize("half_width,n", [(1.25, 5), (1.0, 4), (3.1, 31)])
    def test_reduces_to_standard_fem(self, half_width, n):
        """Test lambda=1/2, D+=D-=1 against an independent constant-coefficient assembler."""
        p = InterfaceProblem(d_plus=1.0, d_minus=1.0, lam=0.5, half_width_L=half_width)
        coeffs = symmetrize(p)
        mesh = build_mesh(half_width, n)
        mass, stiffness = assemble(mesh, build_basis(mesh, coeffs), coeffs)

        ref_mass, ref_stiffness = _standard_fem(mesh, 0.5, 0.25)
        np.testing.assert_allclose(mass.to_dense(), ref_mass, rtol=0, atol=1e-14)
        np.testing.assert_allclose(stiffness.to_dense(), ref_stiffness, rtol=0, atol=1e-14)

    def test_node_aligned_uses_elementwise_coefficients(self):
        """Test that elements on each side carry their own c and kappa."""
        coeffs = symmetrize(InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=0.5))
        mesh = build_mesh(1.0, 4)
        mass, stiffness = assemble(mesh, None, coeffs)
        h = mesh.h

        # Interior node 1 (global node 2) sits on the interface
        assert mass.main[1] == pytest.approx((coeffs.c_minus + coeffs.c_plus) * h / 3.0)
        assert stiffness.main[1] == pytest.approx((coeffs.kappa_minus + coeffs.kappa_plus) / h)
        assert mass.upper[1] == pytest.approx(coeffs.c_plus * h / 6.0)
        assert mass.lower[1] == pytest.approx(coeffs.c_minus * h / 6.0)

    @pytest.mark.parametrize("lam", [0.5, 10.0 / 11.0, 0.05])
    def test_symmetric_positive_definite(self, lam):
        """Test symmetry and Cholesky of M + theta dt K."""
        coeffs = symmetrize(InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=lam))
        mesh = build_mesh(3.1, 31)
        mass, stiffness = assemble(mesh, build_basis(mesh, coeffs), coeffs)

        assert mass.is_symmetric()
        assert stiffness.is_symmetric()
        for theta in (0.0, 0.5, 1.0):
            np.linalg.cholesky(mass.combine(stiffness, 1.0, theta * 0.01).to_dense())

    def test_stiffness_annihilates_nothing(self):
        """Test that the stiffness matrix is positive definite on interior nodes."""
        coeffs = symmetrize(InterfaceProblem(d_plus=100.0, d_minus=1.0, lam=0.3))
        mesh = build_mesh(1.25, 5)
        _, stiffness = assemble(mesh, build_basis(mesh, coeffs), coeffs)
        assert np.all(np.linalg.eigvalsh(stiffness.to_dense()) > 0)


class TestProjection:
    """Test cases for the initial L2 projection."""

    def test_zero_profile(self):
        """Test that u0 = 0 projects to the zero vector."""
        mesh = build_mesh(2.0, 8)
        zero = InitialProfile(func=np.zeros_like, support=(-1.0, 1.0), name="zero")
        np.testing.assert_array_equal(l2_project_initial(mesh, None, zero), np.zeros(9))

    def test_ife_function_is_reproduced(self):
        """Test that projecting a member of the IFE space returns its coefficients."""
        coeffs = symmetrize(InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=10.0 / 11.0))
        mesh = build_mesh(1.25, 5)
        basis = build_basis(mesh, coeffs)
        target = np.array([0.0, 0.3, -0.7, 1.1, 0.4, 0.0])
        member = DiscreteSolution(
            mesh=mesh,
            basis=basis,
            coeffs=coeffs,
            theta=1.0,
            delta_t=1.0,
            times=np.zeros(1),
            coefficients=target[np.newaxis, :],
        )
        profile = InitialProfile(
            func=lambda x: evaluate_uh(member, 0, x), support=(-math.inf, math.inf), name="ife"
        )

        np.testing.assert_allclose(l2_project_initial(mesh, basis, profile), target, atol=1e-12)

    def test_bump_mass_is_preserved(self):
        """Test that the projection integrates to 256/693, the integral of the bump."""
        coeffs = symmetrize(InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=0.5))
        mesh = build_mesh(3.1, 31)
        basis = build_basis(mesh, coeffs)
        a = l2_project_initial(mesh, basis, bump_profile())
        unweighted = assemble_mass(mesh, basis, 1.0, 1.0)

        assert float(np.sum(unweighted.matvec(a[1:-1]))) == pytest.approx(256.0 / 693.0, rel=1e-12)
        assert a[0] == 0.0
        assert a[-1] == 0.0

    def test_non_finite_profile_rejected(self):
        """Test that a profile producing NaN is reported as a solver error."""
        mesh = build_mesh(1.0, 4)
        bad = InitialProfile(func=lambda x: np.full_like(x, np.nan), support=(-0.5, 0.5))
        with pytest.raises(SolverError):
            l2_project_initial(mesh, None, bad)


class TestThetaScheme:
    """Test cases for theta_scheme_solve."""

    def test_zero_initial_condition_stays_zero(self):
        """Test that zero is a fixed point of the scheme."""
        zero = InitialProfile(func=np.zeros_like, support=(-1.0, 1.0), name="zero")
        p = InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=0.5, u0=zero, half_width_L=3.1)
        sol = theta_scheme_solve(p, build_mesh(3.1, 31), 0.5, 0.01)
        assert np.all(sol.coefficients == 0.0)

    def test_time_step_divides_final_time(self):
        """Test that dt is shortened to divide T."""
        p = InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=0.5, half_width_L=3.1)
        sol = theta_scheme_solve(p, build_mesh(3.1, 31), 1.0, 0.03)
        assert sol.n_steps == 7
        assert sol.delta_t == pytest.approx(0.2 / 7)
        assert sol.times[-1] == pytest.approx(0.2)

    def test_boundary_values_stay_zero(self):
        """Test the Dirichlet boundary at every level."""
        p = InterfaceProblem(d_plus=100.0, d_minus=1.0, lam=0.5, half_width_L=3.1)
        sol = theta_scheme_solve(p, build_mesh(3.1, 31), 0.5, 0.05)
        assert np.all(sol.coefficients[:, 0] == 0.0)
        assert np.all(sol.coefficients[:, -1] == 0.0)

    @pytest.mark.parametrize("theta", [0.5, 0.75, 1.0])
    @pytest.mark.parametrize("lam", [0.5, 10.0 / 11.0])
    def test_weighted_norm_nonincreasing(self, theta, lam):
        """Test that u^T M u does not grow for implicit schemes."""
        p = InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=lam, half_width_L=3.1)
        mesh = build_mesh(3.1, 31)
        sol = theta_scheme_solve(p, mesh, theta, 0.02)
        mass, _ = assemble(mesh, sol.basis, sol.coeffs)

        norms = [weighted_norm_squared(sol, k, mass) for k in range(sol.n_steps + 1)]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms[:-1], norms[1:]))

    def test_invalid_theta_rejected(self):
        """Test that theta outside [0, 1] raises SolverError."""
        p = InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=0.5, half_width_L=3.1)
        with pytest.raises(SolverError):
            theta_scheme_solve(p, build_mesh(3.1, 31), 1.5, 0.01)
        with pytest.raises(SolverError):
            theta_scheme_solve(p, build_mesh(3.1, 31), 0.5, 0.0)

    def test_mesh_must_cover_problem_domain(self):
        """Test that a mesh on a different interval is rejected."""
        p = InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=0.5, half_width_L=10.0)
        with pytest.raises(SolverError):
            theta_scheme_solve(p, build_mesh(3.1, 31), 0.5, 0.01)

    def test_startup_is_backward_euler_half_steps(self):
        """Test that start-up levels equal every second level of backward Euler at dt/2."""
        p = InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=10.0 / 11.0, half_width_L=3.1)
        mesh = build_mesh(3.1, 31)
        started = theta_scheme_solve(p, mesh, 0.5, 0.04, startup_steps=5)
        euler = theta_scheme_solve(p, mesh, 1.0, 0.02)

        assert started.n_steps == 5
        assert started.startup_steps == 5
        np.testing.assert_allclose(started.times, euler.times[::2], rtol=1e-14)
        np.testing.assert_allclose(started.coefficients, euler.coefficients[::2], rtol=1e-12, atol=1e-14)

    def test_startup_keeps_time_grid(self):
        """Test that start-up steps do not change the stored levels."""
        p = InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=0.5, half_width_L=3.1)
        mesh = build_mesh(3.1, 31)
        plain = theta_scheme_solve(p, mesh, 0.5, 0.02)
        started = theta_scheme_solve(p, mesh, 0.5, 0.02, startup_steps=2)
        capped = theta_scheme_solve(p, mesh, 0.5, 0.1, startup_steps=9)

        np.testing.assert_array_equal(plain.times, started.times)
        np.testing.assert_array_equal(plain.coefficients[0], started.coefficients[0])
        assert capped.startup_steps == capped.n_steps == 2
        with pytest.raises(SolverError):
            theta_scheme_solve(p, mesh, 0.5, 0.02, startup_steps=-1)

    def test_startup_damps_stiff_modes(self):
        """Test that start-up steps shrink the Crank-Nicolson error when dt is far above h^2."""
        p = InterfaceProblem(d_plus=100.0, d_minus=1.0, lam=100.0 / 101.0, half_width_L=19.0)
        mesh = build_mesh_with_step(19.0, 0.2)
        mask = np.abs(mesh.nodes) <= 5.0
        exact = np.array([exact_solution_u(p, 0.2, x) for x in mesh.nodes[mask]])

        def window_error(sol):
            return math.sqrt(mesh.h * np.sum((sol.final[mask] - exact) ** 2))

        plain = window_error(theta_scheme_solve(p, mesh, 0.5, 0.05))
        started = window_error(theta_scheme_solve(p, mesh, 0.5, 0.05, startup_steps=2))
        assert started < 0.5 * plain

    def test_explicit_step_warns(self, caplog):
        """Test that forward Euler beyond the stability estimate logs a warning."""
        p = InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=0.5, half_width_L=3.1)
        with caplog.at_level(logging.WARNING, logger="src.ifem"):
            theta_scheme_solve(p, build_mesh(3.1, 31), 0.0, 0.1)
        assert any("stability" in r.message for r in caplog.records)

    def test_constant_coefficient_matches_heat_kernel(self):
        """Test D=1, lambda=1/2 against the exact solution with an h^2-sized error."""
        p = InterfaceProblem(d_plus=1.0, d_minus=1.0, lam=0.5, half_width_L=10.0)
        mesh = build_mesh_with_step(10.0, 0.05)
        sol = theta_scheme_solve(p, mesh, 0.5, 0.05 / 4)

        mask = np.abs(mesh.nodes) <= 3.0
        exact = np.array([exact_solution_u(p, 0.2, x) for x in mesh.nodes[mask]])
        assert np.max(np.abs(sol.final[mask] - exact)) < 2e-3


class TestEvaluate:
    """Test cases for evaluate_uh."""

    @pytest.fixture
    def skew_solution(self):
        p = InterfaceProblem(d_plus=10.0, d_minus=1.0, lam=10.0 / 11.0, half_width_L=3.1)
        return theta_scheme_solve(p, build_mesh(3.1, 31), 0.5, 0.02)

    def test_nodes_return_coefficients(self, skew_solution):
        """Test that evaluation at the nodes gives the nodal coefficients exactly."""
        sol = skew_solution
        values = evaluate_uh(sol, sol.n_steps, sol.mesh.nodes)
        np.testing.assert_array_equal(values, sol.final)

    def test_boundary_is_zero(self, skew_solution):
        """Test that u_h vanishes at -L and L."""
        sol = skew_solution
        assert evaluate_uh(sol, sol.n_steps, -3.1) == 0.0
        assert evaluate_uh(sol, sol.n_steps, 3.1) == 0.0

    def test_outside_domain_rejected(self, skew_solution):
        """Test that points outside [-L, L] raise ValueError."""
        with pytest.raises(ValueError):
            evaluate_uh(skew_solution, 0, 3.5)

    def test_flux_condition_across_interface(self, skew_solution):
        """Test kappa+ s+ = kappa- s- from one-sided difference quotients."""
        sol = skew_solution
        coeffs = sol.coeffs
        k = sol.n_steps
        delta = 0.05
        at_zero = evaluate_uh(sol, k, 0.0)
        s_minus = (at_zero - evaluate_uh(sol, k, -delta)) / delta
        s_plus = (evaluate_uh(sol, k, delta) - at_zero) / delta

        assert coeffs.kappa_plus * s_plus == pytest.approx(coeffs.kappa_minus * s_minus, abs=1e-12)


class TestHandleSolverErrors:
    """Test cases for the solver error decorator."""

    def test_linalg_error_wrapped(self):
        """Test that numerical exceptions become SolverError."""

        @handle_solver_errors
        def broken():
            raise np.linalg.LinAlgError("singular")

        with pytest.raises(SolverError) as exc:
            broken()
        assert isinstance(exc.value.__cause__, np.linalg.LinAlgError)

    def test_other_errors_pass_through(self):
        """Test that unrelated exceptions are not swallowed."""

        @handle_solver_errors
        def broken():
            raise KeyError("x")

        with pytest.raises(KeyError):
            broken()
