"""HJB solver tests, including the damped value-iteration oracle.

The oracle solves the same discrete nonlinear system as policy iteration
(upwind advection + central Laplacian evaluation, central-gradient policy)
but by explicit damped fixed-point sweeps written directly with np.roll
stencils, sharing no solver code with the implementation.
"""

import numpy as np
import pytest

from qsmfg.grid import Grid, GridField, gradient_central
from qsmfg.hjb import (
    HjbConvergenceError,
    continuous_dependence_report,
    equation_residual,
    solve_discounted,
    solve_ergodic,
)
from qsmfg.measure import ControlField, JointMeasure, wasserstein1_joint
from qsmfg.model import ControlSet, InstantContext, ModelSpec, example_one, optimal_control, separated_cost

GRID = Grid(1, 64)


def _measure(seed=0, scale=0.8):
    rng = np.random.default_rng(seed)
    x = rng.random((24, 1))
    a = rng.uniform(-scale, scale, (24, 1))
    w = rng.random(24)
    return JointMeasure(x, a, w / w.sum())


def _const_model(c, k=1):
    control = ControlSet("ball", k=k, radius=1.0)
    return ModelSpec(
        name="const",
        kind="instant",
        control=control,
        drift=lambda x, a, ctx: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(a))),
        running_cost=lambda x, a, ctx: np.full(
            np.broadcast_shapes(np.shape(x), np.shape(a))[:-1], c
        ),
        closed_form_control=lambda x, p, ctx: np.zeros(np.shape(p)),
    )


class TestDiscounted:
    def test_constant_cost_closed_form(self):
        # b == 0, l == c: H = -c and u == c/rho solves the discrete system exactly
        spec = _const_model(2.0)
        sol = solve_discounted(spec, InstantContext(_measure()), 0.7, GRID, tol=1e-12)
        assert np.abs(sol.u.values - 2.0 / 0.7).max() < 1e-11
        assert sol.residual < 1e-12

    def test_separated_cost_shift(self):
        spec = separated_cost(d=1, coupling_weight=0.5)
        nu1, nu2 = _measure(1), _measure(2)
        rho = 0.8
        s1 = solve_discounted(spec, InstantContext(nu1), rho, GRID, tol=1e-12)
        s2 = solve_discounted(spec, InstantContext(nu2), rho, GRID, tol=1e-12)
        shift = (spec.measure_cost(nu1) - spec.measure_cost(nu2)) / rho
        assert np.abs((s1.u.values - s2.u.values) - shift).max() < 1e-10

    def test_matches_value_iteration_oracle(self):
        spec = example_one(delta=1.0, eps=0.3, kappa=0.3, potential=0.3)
        ctx = InstantContext(_measure(3))
        sol = solve_discounted(spec, ctx, 1.0, GRID, tol=1e-11)
        assert sol.converged and sol.residual <= 1e-11
        oracle = _value_iteration_oracle(spec, ctx, 1.0, GRID, tol=1e-9)
        assert np.abs(sol.u.values - oracle).max() < 1e-7

    def test_comparison_principle_constant_shift(self):
        # raising l by a constant raises u by delta/rho exactly
        rho = 0.9
        base = solve_discounted(_const_model(1.0), InstantContext(_measure()), rho, GRID)
        shifted = solve_discounted(_const_model(1.6), InstantContext(_measure()), rho, GRID)
        np.testing.assert_allclose(
            shifted.u.values - base.u.values, 0.6 / rho, atol=1e-10
        )

    def test_discount_bound(self):
        # |rho u| <= sup |l| for every solve
        for rho in (1.0, 0.1, 0.01):
            spec = example_one(delta=1.0, eps=0.4, kappa=0.4, potential=0.4)
            ctx = InstantContext(_measure(4))
            sol = solve_discounted(spec, ctx, rho, GRID, tol=1e-10)
            mesh = spec.control.mesh(257)
            x = GRID.coordinates()[:, None, :]
            ell_max = np.abs(spec.running_cost(x, mesh[None, :, :], ctx)).max()
            assert rho * np.abs(sol.u.values).max() <= ell_max + 1e-9

    def test_residual_history_nonincreasing(self):
        spec = example_one(delta=1.0, eps=0.3, kappa=0.3, potential=0.3)
        sol = solve_discounted(spec, InstantContext(_measure(5)), 1.0, GRID, tol=1e-11)
        hist = np.array(sol.residual_history)
        assert np.all(hist[1:] <= hist[:-1] + 1e-12)

    def test_rejects_nonpositive_rho(self):
        with pytest.raises(ValueError):
            solve_discounted(_const_model(1.0), InstantContext(_measure()), 0.0, GRID)

    def test_warm_start_converges_immediately(self):
        spec = example_one(delta=1.0, eps=0.3, kappa=0.3, potential=0.3)
        ctx = InstantContext(_measure(6))
        first = solve_discounted(spec, ctx, 1.0, GRID, tol=1e-11)
        again = solve_discounted(spec, ctx, 1.0, GRID, tol=1e-11, warm_start=first.policy)
        assert again.iterations <= 2

    def test_non_convergence_reports_last_residual(self):
        spec = example_one(delta=1.0, eps=0.3, kappa=0.3, potential=0.3)
        sol = solve_discounted(spec, InstantContext(_measure(14)), 1.0, GRID, tol=1e-15, max_iter=1)
        assert not sol.converged
        assert sol.residual == sol.residual_history[-1] > 0


class TestSelfConvergence:
    def test_solution_converges_under_grid_refinement(self):
        # nodes of the coarse grids are subsets of the finer ones, so the
        # discrete solutions can be compared pointwise; the errors must
        # shrink at least at the upwind first-order rate
        spec = example_one(delta=1.0, eps=0.3, kappa=0.3, potential=0.3)
        ctx = InstantContext(_measure(0))
        sols = {}
        for n in (32, 64, 128):
            sols[n] = solve_discounted(spec, ctx, 1.0, Grid(1, n), tol=1e-12).u.values
        e_coarse = np.abs(sols[32] - sols[64][::2]).max()
        e_fine = np.abs(sols[64] - sols[128][::2]).max()
        assert e_fine < e_coarse
        assert 1.8 <= e_coarse / e_fine <= 4.5  # between first and second order


class TestNormalizedEvaluation:
    def test_augmented_solve_equals_plain_solve(self):
        # the normalized (w, s) system is algebraically the plain evaluation
        # solve for rho > 0: reconstruct u = w + s/rho and compare against a
        # direct sparse solve of (rho I - lap - b.grad_up) u = l
        import scipy.sparse as sparse
        import scipy.sparse.linalg as spla

        from qsmfg.hjb import _evaluation_matrix, _policy_evaluation

        grid = Grid(1, 32)
        rng = np.random.default_rng(21)
        bvals = rng.uniform(-1.5, 1.5, (grid.size, 1))
        ell = rng.uniform(-1.0, 1.0, grid.size)
        rho = 0.3
        w, s = _policy_evaluation(grid, bvals, ell, rho)
        u_aug = w + s / rho
        full = _evaluation_matrix(grid, bvals, rho).toarray()
        plain = sparse.csr_matrix(full[: grid.size, : grid.size])
        u_plain = spla.spsolve(plain, ell)
        np.testing.assert_allclose(u_aug, u_plain, atol=1e-11)
        assert w[0] == 0.0  # normalization row is exact


class TestErgodic:
    def test_constant_cost(self):
        # b == 0, l == c: lambda = c, u == 0
        spec = _const_model(1.3)
        sol = solve_ergodic(spec, InstantContext(_measure()), GRID, tol=1e-12, method="direct")
        assert sol.lam == pytest.approx(1.3, abs=1e-11)
        assert np.abs(sol.u.values).max() < 1e-11
        assert sol.u.flat()[0] == 0.0  # normalization exact

    def test_separated_cost_measure_independent_u(self):
        spec = separated_cost(d=1, coupling_weight=0.5)
        s1 = solve_ergodic(spec, InstantContext(_measure(1)), GRID, tol=1e-12, method="direct")
        s2 = solve_ergodic(spec, InstantContext(_measure(2)), GRID, tol=1e-12, method="direct")
        assert np.abs(s1.u.values - s2.u.values).max() < 1e-9

    def test_modes_agree(self):
        spec = example_one(delta=1.0, eps=0.3, kappa=0.3, potential=0.3)
        ctx = InstantContext(_measure(7))
        tol = 1e-8
        direct = solve_ergodic(spec, ctx, GRID, tol=1e-12, method="direct")
        vanish = solve_ergodic(spec, ctx, GRID, tol=tol, method="vanishing")
        gap = abs(direct.lam - vanish.lam) + np.abs(direct.u.values - vanish.u.values).max()
        assert gap <= 10 * tol

    def test_vanishing_sequence_exhaustion_reported(self):
        spec = example_one(delta=1.0, eps=0.3, kappa=0.3, potential=0.3)
        with pytest.raises(HjbConvergenceError) as err:
            solve_ergodic(
                spec, InstantContext(_measure(8)), GRID, tol=1e-13, method="vanishing", max_levels=4
            )
        assert err.value.residual > 0


class TestContinuousDependence:
    def test_identical_contexts(self):
        spec = example_one(delta=1.0, eps=0.3, kappa=0.3, potential=0.3)
        nu = _measure(9)
        rep = continuous_dependence_report(spec, InstantContext(nu), InstantContext(nu), 1.0, GRID)
        assert rep.value < 1e-10
        assert rep.data_drift_sup == 0.0 and rep.data_cost_sup == 0.0

    def test_separated_cost_normalized_difference_zero(self):
        spec = separated_cost(d=1, coupling_weight=0.5)
        rep = continuous_dependence_report(
            spec, InstantContext(_measure(1)), InstantContext(_measure(2)), 1.0, GRID
        )
        assert rep.normalized_sup < 1e-10
        assert rep.gradient_sup < 1e-10
        # the full difference is the constant shift, visible in rho_sup
        assert rep.rho_sup == pytest.approx(abs(rep.data_cost_sup), rel=1e-6)

    def test_ratio_stable_over_discount_sweep(self):
        spec = example_one(delta=1.0, eps=0.4, kappa=0.4, potential=0.3)
        nu1, nu2 = _measure(10), _measure(11)
        w1 = wasserstein1_joint(nu1, nu2)
        ratios = []
        for rho in (1.0, 0.1, 0.01):
            rep = continuous_dependence_report(
                spec, InstantContext(nu1), InstantContext(nu2), rho, GRID
            )
            ratios.append(rep.value / w1)
        assert max(ratios) <= 2.0 * min(ratios) + 1e-9
        assert all(np.isfinite(r) for r in ratios)


class TestSmoke2D:
    def test_constant_cost_2d(self):
        grid = Grid(2, 8)
        spec = _const_model(1.1, k=2)
        rng = np.random.default_rng(12)
        nu = JointMeasure(rng.random((10, 2)), np.zeros((10, 2)), np.full(10, 0.1))
        sol = solve_discounted(spec, InstantContext(nu), 1.0, grid, tol=1e-11)
        assert np.abs(sol.u.values - 1.1).max() < 1e-10

    def test_example_one_2d(self):
        grid = Grid(2, 8)
        spec = example_one(d=2, delta=1.0, eps=0.2, kappa=0.2, potential=0.2)
        rng = np.random.default_rng(13)
        nu = JointMeasure(rng.random((10, 2)), rng.uniform(-0.5, 0.5, (10, 2)), np.full(10, 0.1))
        sol = solve_discounted(spec, InstantContext(nu), 1.0, grid, tol=1e-10)
        assert sol.converged
        res, _ = equation_residual(spec, InstantContext(nu), 1.0, sol.u)
        assert res <= 1e-10


def _value_iteration_oracle(spec, ctx, rho, grid, tol=1e-9, max_sweeps=400_000):
    """Damped explicit fixed point for the same monotone discrete system."""
    n = grid.n
    h = grid.h
    x = grid.coordinates()
    u = np.zeros(n)
    bound = spec.coef_bound
    tau = 1.0 / (rho + 2.0 / h**2 + 2.0 * bound / h)
    for sweep in range(max_sweeps):
        lap = (np.roll(u, -1) + np.roll(u, 1) - 2.0 * u) / h**2
        du_c = (np.roll(u, -1) - np.roll(u, 1)) / (2.0 * h)
        a = optimal_control(spec, x, du_c[:, None], ctx)
        b = spec.drift(x, a, ctx)[:, 0]
        ell = spec.running_cost(x, a, ctx)
        fwd = (np.roll(u, -1) - u) / h
        bwd = (u - np.roll(u, 1)) / h
        du_up = np.where(b > 0, fwd, np.where(b < 0, bwd, du_c))
        residual = rho * u - lap - b * du_up - ell
        u = u - tau * residual
        if sweep % 200 == 0 and np.abs(residual).max() < tol:
            break
    return u
