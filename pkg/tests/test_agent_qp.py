"""Agent subproblem: assembly, dualization, box-QP solver, primal recovery."""

import numpy as np
import pytest

from conftest import double_integrator_model, make_condensed, primal_to_dense, random_boxed_qp
from swarm_admm.agent_qp import (
    PrimalAgentQp,
    assemble_primal,
    dualize,
    project_onto_box,
    recover_primal,
    replace_lin_vec,
    solve_agent_subproblem,
    solve_box_qp,
    update_c_block,
)
from swarm_admm.oracle import finite_difference_gradient, kkt_enumerate


def one_dim_dual():
    """min xi^2 s.t. -xi <= -1, whose dual is min mu^2/4 - mu over mu >= 0."""
    primal = PrimalAgentQp(
        quad_mat=np.array([[1.0]]), lin_vec=np.zeros(1),
        eq_mat=np.zeros((0, 1)), eq_vec=np.zeros(0),
        ineq_mat=np.array([[-1.0]]), ineq_vec=np.array([-1.0]),
        sel_mat=np.zeros((0, 1)), alpha=0.0)
    return primal, dualize(primal)


def small_condensed(T=3):
    model = double_integrator_model(dt=0.1, axes=1)
    return make_condensed(model, T, Q_stage=np.eye(2), R_stage=0.1 * np.eye(1),
                          u_bounds=([-2.0], [2.0]))


class TestAssemblePrimal:
    def test_zero_data_gives_zero_linear(self):
        c = small_condensed()
        d = (c.n + c.m) * c.T
        p = assemble_primal(c, np.zeros(c.n), np.zeros(d), np.zeros(d), 1.0)
        assert np.array_equal(p.lin_vec, np.zeros(d))
        assert np.array_equal(p.eq_vec, np.zeros(c.n * c.T))

    def test_beta_formula(self):
        c = small_condensed()
        d = (c.n + c.m) * c.T
        # sigma=2, z=1, lam=2 -> beta = 0 -> consensus part of q vanishes
        p = assemble_primal(c, np.zeros(c.n), np.ones(d), 2.0 * np.ones(d), 2.0)
        assert np.allclose(p.lin_vec, np.zeros(d), atol=1e-14)

    def test_structure(self):
        c = small_condensed()
        d = (c.n + c.m) * c.T
        nT = c.n * c.T
        rng = np.random.default_rng(0)
        sigma = 1.7
        p = assemble_primal(c, rng.standard_normal(c.n),
                            rng.standard_normal(d), rng.standard_normal(d), sigma)
        assert np.array_equal(p.eq_mat[:, :nT], -np.eye(nT))
        assert np.array_equal(p.eq_mat[:, nT:], c.H)
        assert np.array_equal(p.ineq_mat, np.vstack([np.eye(d), -np.eye(d)]))
        assert np.array_equal(
            p.ineq_vec, np.concatenate([c.x_hi, c.u_hi, -c.x_lo, -c.u_lo]))
        assert np.array_equal(p.sel_mat, np.hstack([np.zeros((c.m * c.T, nT)),
                                                    np.eye(c.m * c.T)]))
        assert np.linalg.eigvalsh(p.quad_mat).min() >= sigma / 2 - 1e-12

    def test_eq_vec_is_minus_Gx(self):
        c = small_condensed()
        d = (c.n + c.m) * c.T
        x_t = np.array([1.0, -0.5])
        p = assemble_primal(c, x_t, np.zeros(d), np.zeros(d), 1.0)
        assert np.allclose(p.eq_vec, -c.G @ x_t, atol=1e-14)

    def test_rejects_nonpositive_sigma(self):
        c = small_condensed()
        d = (c.n + c.m) * c.T
        with pytest.raises(ValueError):
            assemble_primal(c, np.zeros(c.n), np.zeros(d), np.zeros(d), 0.0)


class TestDualize:
    def test_stack_row_count(self):
        c = small_condensed()
        d = (c.n + c.m) * c.T
        p = assemble_primal(c, np.zeros(c.n), np.zeros(d), np.zeros(d), 1.0)
        dual = dualize(p)
        assert dual.stack.shape == (3 * d, d)

    def test_one_dim_hand_instance(self):
        _, dual = one_dim_dual()
        # objective mu^2/4 - mu on mu >= 0
        for mu in (0.0, 1.0, 2.0, 3.0):
            assert np.isclose(dual.objective(np.array([mu])), mu * mu / 4 - mu)
        assert dual.lo[0] == 0.0 and dual.hi[0] == np.inf

    def test_alpha_zero_pins_selection_multiplier(self):
        c = small_condensed()
        d = (c.n + c.m) * c.T
        p = assemble_primal(c, np.zeros(c.n), np.zeros(d), np.zeros(d), 1.0)
        dual = dualize(p)
        n_eq, n_ineq, n_sel = dual.block_sizes
        sel = slice(n_eq + n_ineq, None)
        assert np.all(dual.lo[sel] == 0.0) and np.all(dual.hi[sel] == 0.0)
        mu = np.full(dual.stack.shape[0], 7.0)
        assert np.all(dual.project(mu)[sel] == 0.0)

    def test_rejects_indefinite_quadratic(self):
        p = PrimalAgentQp(
            quad_mat=np.array([[-1.0]]), lin_vec=np.zeros(1),
            eq_mat=np.zeros((0, 1)), eq_vec=np.zeros(0),
            ineq_mat=np.zeros((0, 1)), ineq_vec=np.zeros(0),
            sel_mat=np.zeros((0, 1)), alpha=0.0)
        with pytest.raises(ValueError):
            dualize(p)
        dense = PrimalAgentQp(
            quad_mat=np.array([[1.0, 2.0], [2.0, 1.0]]), lin_vec=np.zeros(2),
            eq_mat=np.zeros((0, 2)), eq_vec=np.zeros(0),
            ineq_mat=np.zeros((0, 2)), ineq_vec=np.zeros(0),
            sel_mat=np.zeros((0, 2)), alpha=0.0)
        with pytest.raises(ValueError):
            dualize(dense)


class TestProjection:
    def test_clamp_values(self):
        lo = np.array([-np.inf, 0.0, -0.5])
        hi = np.array([np.inf, np.inf, 0.5])
        mu = np.array([-3.0, -1.0, 0.7])
        assert np.array_equal(project_onto_box(mu, lo, hi), [-3.0, 0.0, 0.5])

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        lo = np.array([-np.inf, 0.0, -0.5])
        hi = np.array([np.inf, np.inf, 0.5])
        for _ in range(50):
            mu = rng.standard_normal(3) * 3
            once = project_onto_box(mu, lo, hi)
            assert np.array_equal(project_onto_box(once, lo, hi), once)

    def test_nonexpansive(self):
        rng = np.random.default_rng(2)
        lo = np.concatenate([np.full(3, -np.inf), np.zeros(4), np.full(2, -0.3)])
        hi = np.concatenate([np.full(3, np.inf), np.full(4, np.inf), np.full(2, 0.3)])
        for _ in range(100):
            a, b = rng.standard_normal(9) * 2, rng.standard_normal(9) * 2
            pa, pb = project_onto_box(a, lo, hi), project_onto_box(b, lo, hi)
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-15

    def test_degenerate_alpha_zero(self):
        mu = np.array([0.3, -0.2])
        assert np.array_equal(project_onto_box(mu, np.zeros(2), np.zeros(2)),
                              np.zeros(2))


class TestSolveBoxQp:
    def test_one_dim_kkt(self):
        _, dual = one_dim_dual()
        res = solve_box_qp(dual, tol=1e-10)
        assert res.converged
        assert abs(res.mu[0] - 2.0) < 1e-8
        xi = recover_primal(res.mu, dual)
        assert abs(xi[0] - 1.0) < 1e-8

    def test_zero_data_is_immediate(self):
        c = small_condensed()
        d = (c.n + c.m) * c.T
        p = assemble_primal(c, np.zeros(c.n), np.zeros(d), np.zeros(d), 1.0)
        # strip the sentinel-bound offsets so omega is exactly zero
        p2 = PrimalAgentQp(p.quad_mat, np.zeros(d), p.eq_mat, np.zeros(c.n * c.T),
                           p.ineq_mat, np.zeros(2 * d), p.sel_mat, 0.0)
        res = solve_box_qp(dualize(p2))
        assert res.converged and res.iterations == 0
        assert np.array_equal(res.mu, np.zeros(3 * d))

    def test_matches_kkt_oracle_randomized(self):
        rng = np.random.default_rng(12)
        for trial in range(30):
            primal = random_boxed_qp(rng, dim=10, n_eq=3, n_bounded=3,
                                     alpha=0.3 if trial % 3 == 0 else 0.0,
                                     sel_rows=2 if trial % 3 == 0 else 0)
            dual = dualize(primal)
            res = solve_box_qp(dual, tol=1e-9, max_iter=20000)
            assert res.converged
            xi = recover_primal(res.mu, dual)
            oracle = kkt_enumerate(primal_to_dense(primal))
            assert primal.objective(xi) - oracle.objective <= 1e-6 * max(
                1.0, abs(oracle.objective))

    def test_duality_gap_randomized(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            primal = random_boxed_qp(rng, dim=12, n_eq=4, n_bounded=4)
            dual = dualize(primal)
            res = solve_box_qp(dual, tol=1e-9, max_iter=20000)
            xi = recover_primal(res.mu, dual)
            p_val = primal.objective(xi)
            d_val = -res.objective
            assert abs(p_val - d_val) <= 1e-5 * max(1.0, abs(p_val))

    def test_objective_monotone_accepted(self):
        rng = np.random.default_rng(14)
        primal = random_boxed_qp(rng, dim=15, n_eq=5, n_bounded=5)
        res = solve_box_qp(dualize(primal), tol=1e-10, max_iter=5000,
                           record_history=True)
        hist = np.array(res.history)
        scale = max(1.0, abs(hist[0]))
        assert np.all(np.diff(hist) <= 1e-12 * scale)

    def test_complementary_slackness(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            primal = random_boxed_qp(rng, dim=10, n_eq=3, n_bounded=4)
            dual = dualize(primal)
            res = solve_box_qp(dual, tol=1e-10, max_iter=50000)
            assert res.converged
            xi = recover_primal(res.mu, dual)
            n_eq, n_ineq, _ = dual.block_sizes
            mu2 = res.mu[n_eq:n_eq + n_ineq]
            slack = primal.ineq_vec - primal.ineq_mat @ xi
            tight = mu2 > 1e-4
            assert np.all(np.abs(slack[tight]) <= 1e-5)

    def test_warm_start_restarts_cheaply(self):
        rng = np.random.default_rng(16)
        primal = random_boxed_qp(rng, dim=10, n_eq=3, n_bounded=3)
        dual = dualize(primal)
        first = solve_box_qp(dual, tol=1e-8)
        again = solve_box_qp(dual, tol=1e-8, mu0=first.mu)
        assert again.converged and again.iterations <= 1

    def test_max_iter_flag(self):
        rng = np.random.default_rng(17)
        primal = random_boxed_qp(rng, dim=10, n_eq=3, n_bounded=3)
        res = solve_box_qp(dualize(primal), tol=1e-12, max_iter=2)
        assert not res.converged
        assert res.iterations == 2

    def test_dual_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(18)
        for _ in range(5):
            primal = random_boxed_qp(rng, dim=6, n_eq=2, n_bounded=2)
            dual = dualize(primal)
            mu = rng.standard_normal(dual.stack.shape[0])
            analytic, _ = dual.grad_and_value(mu)
            numeric = finite_difference_gradient(dual.objective, mu, h=1e-5)
            assert np.linalg.norm(analytic - numeric) <= 1e-5 * (
                1.0 + np.linalg.norm(analytic))


class TestRecoverPrimal:
    def test_inversion_identity(self):
        rng = np.random.default_rng(19)
        primal = random_boxed_qp(rng, dim=7, n_eq=2, n_bounded=2)
        v = rng.standard_normal(7)
        shifted = PrimalAgentQp(primal.quad_mat, -2.0 * primal.quad_mat @ v,
                                primal.eq_mat, primal.eq_vec, primal.ineq_mat,
                                primal.ineq_vec, primal.sel_mat, 0.0)
        dual = dualize(shifted)
        xi = recover_primal(np.zeros(dual.stack.shape[0]), dual)
        assert np.allclose(xi, v, atol=1e-10)

    def test_equality_constrained_matches_kkt(self):
        rng = np.random.default_rng(20)
        primal = random_boxed_qp(rng, dim=9, n_eq=4, n_bounded=0)
        dual = dualize(primal)
        res = solve_box_qp(dual, tol=1e-11, max_iter=100000)
        xi = recover_primal(res.mu, dual)
        oracle = kkt_enumerate(primal_to_dense(primal))
        assert np.linalg.norm(xi - oracle.x) <= 1e-8 * (1 + np.linalg.norm(oracle.x))


class TestAgentSubproblem:
    def test_zero_problem_returns_origin(self):
        c = small_condensed()
        d = (c.n + c.m) * c.T
        sol = solve_agent_subproblem(c, np.zeros(c.n), np.zeros(d), np.zeros(d), 1.0)
        assert sol.converged
        assert np.linalg.norm(sol.x) <= 1e-8
        assert np.linalg.norm(sol.u) <= 1e-8

    def test_double_integrator_matches_dense_oracle(self):
        rng = np.random.default_rng(21)
        c = small_condensed(T=3)
        d = (c.n + c.m) * c.T
        x_t = rng.standard_normal(c.n)
        z = 0.3 * rng.standard_normal(d)
        lam = 0.3 * rng.standard_normal(d)
        sigma = 2.0
        sol = solve_agent_subproblem(c, x_t, z, lam, sigma, tol=1e-10,
                                     max_iter=50000)
        assert sol.converged
        primal = assemble_primal(c, x_t, z, lam, sigma)
        oracle = kkt_enumerate(primal_to_dense(primal))
        xi = np.concatenate([sol.x, sol.u])
        assert primal.objective(xi) - oracle.objective <= 1e-6 * max(
            1.0, abs(oracle.objective))
        # feasibility of the recovered point
        assert np.linalg.norm(primal.eq_mat @ xi - primal.eq_vec, np.inf) <= 1e-6
        assert np.all(primal.ineq_mat @ xi - primal.ineq_vec <= 1e-6)

    def test_flag_propagates(self):
        c = small_condensed(T=3)
        d = (c.n + c.m) * c.T
        rng = np.random.default_rng(22)
        sol = solve_agent_subproblem(c, rng.standard_normal(c.n),
                                     rng.standard_normal(d),
                                     rng.standard_normal(d), 1.0,
                                     tol=1e-14, max_iter=1)
        assert not sol.converged


def test_update_c_block():
    assert np.array_equal(update_c_block(np.array([1.0, 0.0]), np.zeros(2), 3.0),
                          [1.0, 0.0])
    assert np.isclose(update_c_block(np.array([1.0]), np.array([0.5]), 1.0)[0], 0.5)
    assert np.isclose(update_c_block(np.array([0.0]), np.array([-1.0]), 10.0)[0], 0.1)
    with pytest.raises(ValueError):
        update_c_block(np.zeros(1), np.zeros(1), -1.0)


def test_replace_lin_vec_shares_structure():
    rng = np.random.default_rng(23)
    primal = random_boxed_qp(rng, dim=6, n_eq=2, n_bounded=2)
    dual = dualize(primal)
    new = replace_lin_vec(dual, np.arange(6.0))
    assert new.stack is dual.stack
    assert np.array_equal(new.lin_vec, np.arange(6.0))
    assert np.array_equal(dual.lin_vec, primal.lin_vec)
