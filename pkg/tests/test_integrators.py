import numpy as np
import pytest

from lilan.exceptions import GridError, ShapeError, SolverFailureError, StepBudgetError
from lilan.integrators import (
    ImplicitSolverConfig,
    SemilinearOperator,
    circulant_eigenvalues,
    etdrk4_solve,
    phi_coefficients,
    solve_stiff,
)
from lilan.problems import (
    ROBERTSON_CANONICAL_P,
    ROBERTSON_X0,
    allen_cahn_problem,
    robertson_jacobian,
    robertson_rhs,
    robertson_sampler,
    robertson_time_grid,
)


def robertson_solve(p, cfg):
    grid = robertson_time_grid()
    return solve_stiff(
        lambda x: robertson_rhs(x, p),
        lambda x: robertson_jacobian(x, p),
        ROBERTSON_X0,
        grid - grid[0],
        cfg,
    )


class TestSolveStiff:
    def test_linear_decay_within_ten_rtol(self):
        cfg = ImplicitSolverConfig(rtol=1e-5, atol=1e-11)
        traj = solve_stiff(
            lambda x: -x, lambda x: np.array([[-1.0]]), np.array([1.0]), np.array([0.0, 1.0]), cfg
        )
        assert abs(traj[1, 0] - np.exp(-1.0)) <= 10.0 * cfg.rtol

    def test_accuracy_improves_with_tolerance(self):
        errs = []
        for rtol in (1e-4, 1e-6, 1e-8):
            cfg = ImplicitSolverConfig(rtol=rtol, atol=rtol * 1e-6)
            traj = solve_stiff(
                lambda x: -x, lambda x: np.array([[-1.0]]), np.array([1.0]),
                np.array([0.0, 1.0]), cfg,
            )
            errs.append(abs(traj[1, 0] - np.exp(-1.0)))
        assert errs[0] > errs[1] > errs[2]

    def test_robertson_conservation_canonical(self):
        traj = robertson_solve(ROBERTSON_CANONICAL_P, ImplicitSolverConfig())
        assert np.max(np.abs(traj.sum(axis=1) - 1.0)) <= 1e-9

    def test_robertson_transient_peak(self):
        # oracle: self-convergent run at rtol 1e-12 puts the peak of the
        # fast species at 3.65e-5 in the 2.8e-3..4.5e-3 s window
        ref = robertson_solve(ROBERTSON_CANONICAL_P, ImplicitSolverConfig(rtol=1e-12, atol=1e-16))
        grid = robertson_time_grid()
        k = int(np.argmax(ref[:, 1]))
        assert ref[:, 1].max() == pytest.approx(3.65e-5, rel=2e-3)
        assert 2e-3 <= grid[k] <= 6e-3
        loose = robertson_solve(ROBERTSON_CANONICAL_P, ImplicitSolverConfig())
        assert loose[:, 1].max() == pytest.approx(ref[:, 1].max(), rel=1e-6)

    def test_robertson_self_convergence(self):
        cfg = ImplicitSolverConfig()
        a = robertson_solve(ROBERTSON_CANONICAL_P, cfg)
        b = robertson_solve(ROBERTSON_CANONICAL_P, cfg.tightened(100.0))
        per_time = np.linalg.norm(a - b, axis=1) / np.linalg.norm(b, axis=1)
        assert per_time.max() <= 1e-6

    def test_zero_sum_rhs_conserves_component_sum(self):
        # linear exchange system: columns sum to zero
        a = np.array([[-2.0, 1.0, 0.0], [2.0, -3.0, 0.5], [0.0, 2.0, -0.5]])
        cfg = ImplicitSolverConfig(rtol=1e-8, atol=1e-12)
        traj = solve_stiff(
            lambda x: a @ x, lambda x: a, np.array([0.2, 0.5, 0.3]),
            np.linspace(0.0, 5.0, 11), cfg,
        )
        assert np.max(np.abs(traj.sum(axis=1) - 1.0)) <= cfg.atol * 1e3

    def test_outputs_at_exact_times_and_initial_row(self):
        times = np.array([0.0, 0.25, 1.0])
        traj = solve_stiff(
            lambda x: -x, lambda x: np.array([[-1.0]]), np.array([2.0]), times,
            ImplicitSolverConfig(rtol=1e-9, atol=1e-12),
        )
        assert traj[0, 0] == 2.0
        assert traj[1, 0] == pytest.approx(2.0 * np.exp(-0.25), rel=1e-7)

    def test_deterministic(self):
        a = robertson_solve(ROBERTSON_CANONICAL_P, ImplicitSolverConfig())
        b = robertson_solve(ROBERTSON_CANONICAL_P, ImplicitSolverConfig())
        assert np.array_equal(a, b)

    def test_bad_output_times(self):
        with pytest.raises(ShapeError):
            solve_stiff(lambda x: -x, lambda x: np.array([[-1.0]]), np.array([1.0]),
                        np.array([1.0, 0.5]), ImplicitSolverConfig())

    def test_step_budget_error(self):
        cfg = ImplicitSolverConfig(rtol=1e-10, atol=1e-14, max_steps=5)
        with pytest.raises(StepBudgetError):
            robertson_solve(ROBERTSON_CANONICAL_P, cfg)

    def test_newton_failure_surfaces(self):
        # rhs blows up in finite time and is not resolvable: x' = x^2 from 1
        # diverges at t=1; requesting t=2 must fail rather than loop forever
        cfg = ImplicitSolverConfig(rtol=1e-6, atol=1e-9, max_steps=20000)
        with pytest.raises((SolverFailureError, StepBudgetError)):
            solve_stiff(
                lambda x: x**2, lambda x: np.array([[2.0 * x[0]]]), np.array([1.0]),
                np.array([0.0, 2.0]), cfg,
            )


class TestPhiCoefficients:
    def test_zero_eigenvalue_limits(self):
        dt = 0.3
        c = phi_coefficients(np.array([0.0]), dt)
        assert c.q[0] == pytest.approx(dt / 2.0, abs=1e-14)
        # total nonlinear weight reduces to dt (phi1(0) = 1)
        assert (c.f1 + 4.0 * c.f2 + c.f3)[0] == pytest.approx(dt, abs=1e-13)

    def test_exponential_coefficient(self):
        dt = 0.3
        c = phi_coefficients(np.array([-1.0 / dt]), dt)
        assert c.e_full[0] == pytest.approx(np.exp(-1.0), abs=1e-15)

    def test_branch_agreement_at_threshold(self):
        dt = 0.3
        lam = np.array([0.4 / dt, -0.4 / dt])
        closed = phi_coefficients(lam, dt, small_threshold=0.0)
        contour = phi_coefficients(lam, dt, small_threshold=1.0)
        for name in ("q", "f1", "f2", "f3"):
            assert np.max(np.abs(getattr(closed, name) - getattr(contour, name))) <= 1e-10

    def test_small_z_stability(self):
        # closed forms lose ~10 digits to cancellation at z = 1e-7; the
        # contour branch must match the series f1 = 1/6 + z/6 + O(z^2)
        z = 1e-7
        c = phi_coefficients(np.array([z]), 1.0)
        assert c.f1[0] == pytest.approx(1.0 / 6.0 + z / 6.0, rel=1e-10)


class TestEtdrk4:
    def test_pure_linear_is_exact(self):
        lam = np.array([-1.0, -10.0, -100.0, 0.5])
        op = SemilinearOperator(lam, lambda u: np.zeros_like(u))
        # stay in physical space with a diagonal operator: use one mode at a time
        dt = 0.01
        for k, lam_k in enumerate(lam):
            single = SemilinearOperator(np.array([lam_k]), lambda u: np.zeros_like(u))
            out = etdrk4_solve(single, np.array([1.0]), dt, np.array([dt]))
            assert out[0, 0] == pytest.approx(np.exp(lam_k * dt), rel=1e-14)

    def test_order_on_logistic_problem(self):
        # u' = u - u^2 has the closed-form logistic solution
        op = SemilinearOperator(np.array([1.0]), lambda u: -(u**2))
        u0, horizon = 0.1, 2.0
        exact = u0 * np.exp(horizon) / (1.0 + u0 * (np.exp(horizon) - 1.0))
        errs = []
        for k in range(4):
            dt = 0.2 / 2**k
            out = etdrk4_solve(op, np.array([u0]), dt, np.array([horizon]))
            errs.append(abs(out[0, 0] - exact))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 3.8)

    def test_allen_cahn_uniform_states_are_fixed_points(self):
        op = allen_cahn_problem(n=201).make_operator()
        for val in (1.0, -1.0):
            u = np.full(200, val)
            out = etdrk4_solve(op, u, 0.025, np.array([0.025]))
            assert np.max(np.abs(out[0] - u)) <= 1e-12

    def test_initial_output_row(self):
        op = SemilinearOperator(np.array([-1.0]), lambda u: np.zeros_like(u))
        out = etdrk4_solve(op, np.array([3.0]), 0.1, np.array([0.0, 0.1]))
        assert out[0, 0] == 3.0

    def test_off_grid_time_rejected(self):
        op = SemilinearOperator(np.array([-1.0]), lambda u: np.zeros_like(u))
        with pytest.raises(GridError):
            etdrk4_solve(op, np.array([1.0]), 0.1, np.array([0.25]))

    def test_eigenvalue_length_mismatch(self):
        op = SemilinearOperator(np.array([-1.0, -2.0]), lambda u: np.zeros_like(u))
        with pytest.raises(ShapeError):
            etdrk4_solve(op, np.array([1.0]), 0.1, np.array([0.1]))


class TestCirculantEigenvalues:
    def test_constant_mode_is_zero(self):
        lam = circulant_eigenvalues([1.0, -2.0, 1.0], 16, 2.0 * np.pi)
        assert lam[0] == pytest.approx(0.0, abs=1e-14)

    def test_second_difference_pattern(self):
        n, length = 16, 2.0 * np.pi
        h = length / n
        lam = circulant_eigenvalues([1.0, -2.0, 1.0], n, length)
        theta = 2.0 * np.pi * np.arange(n) / n
        assert np.allclose(lam, -(2.0 - 2.0 * np.cos(theta)) / h**2)

    def test_biharmonic_is_squared_laplacian(self):
        n, length = 32, 2.0
        lap = circulant_eigenvalues([1.0, -2.0, 1.0], n, length)
        bih = circulant_eigenvalues([1.0, -4.0, 6.0, -4.0, 1.0], n, length)
        assert np.allclose(bih, lap**2, rtol=1e-12, atol=1e-8)

    def test_against_dense_eigendecomposition(self):
        n, length = 8, 2.0 * np.pi
        h = length / n
        lam = circulant_eigenvalues([1.0, -2.0, 1.0], n, length)
        dense = np.zeros((n, n))
        for i in range(n):
            dense[i, i] = -2.0 / h**2
            dense[i, (i + 1) % n] = 1.0 / h**2
            dense[i, (i - 1) % n] = 1.0 / h**2
        modes = np.exp(2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
        dense_lam = np.diag(np.linalg.solve(modes, dense @ modes)).real
        assert np.max(np.abs(lam - dense_lam)) <= 1e-10

    def test_stencil_wider_than_grid(self):
        with pytest.raises(ShapeError):
            circulant_eigenvalues([1.0, -4.0, 6.0, -4.0, 1.0], 4, 1.0)
