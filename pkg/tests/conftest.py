"""Shared builders for randomized test instances."""

import numpy as np

from swarm_admm.dynamics import BOUND_SENTINEL, CondensedMpc, SystemModel, condense
from swarm_admm.agent_qp import PrimalAgentQp
from swarm_admm.oracle import DenseQp


def double_integrator_model(dt=0.1, axes=3):
    """Exact discrete double integrator: n = 2*axes, m = axes."""
    n = 2 * axes
    A = np.eye(n)
    A[:axes, axes:] = dt * np.eye(axes)
    B = np.vstack([0.5 * dt * dt * np.eye(axes), dt * np.eye(axes)])
    return SystemModel(A, B)


def make_condensed(model, T, r=None, Q_stage=None, Q_term=None, R_stage=None,
                   x_bounds=None, u_bounds=None, alpha=0.0):
    n, m = model.n, model.m
    G, H = condense(model, T)
    if Q_stage is None:
        Q_stage = np.eye(n)
    if Q_term is None:
        Q_term = Q_stage
    if R_stage is None:
        R_stage = np.zeros((m, m))
    Q = np.zeros((n * T, n * T))
    R = np.zeros((m * T, m * T))
    for i in range(T):
        Q[i * n:(i + 1) * n, i * n:(i + 1) * n] = Q_stage if i < T - 1 else Q_term
        R[i * m:(i + 1) * m, i * m:(i + 1) * m] = R_stage
    if x_bounds is None:
        x_lo = np.full(n * T, -BOUND_SENTINEL)
        x_hi = np.full(n * T, BOUND_SENTINEL)
    else:
        x_lo = np.tile(np.asarray(x_bounds[0], dtype=float), T)
        x_hi = np.tile(np.asarray(x_bounds[1], dtype=float), T)
    if u_bounds is None:
        u_lo = np.full(m * T, -BOUND_SENTINEL)
        u_hi = np.full(m * T, BOUND_SENTINEL)
    else:
        u_lo = np.tile(np.asarray(u_bounds[0], dtype=float), T)
        u_hi = np.tile(np.asarray(u_bounds[1], dtype=float), T)
    return CondensedMpc(
        G=G, H=H, Q=Q, R=R,
        r=np.zeros(n * T) if r is None else np.asarray(r, dtype=float),
        x_lo=x_lo, x_hi=x_hi, u_lo=u_lo, u_hi=u_hi, alpha=alpha, T=T)


def random_boxed_qp(rng, dim=8, n_eq=3, n_bounded=3, alpha=0.0, sel_rows=0):
    """Random strictly feasible boxed lasso QP in PrimalAgentQp form.

    Bounds are finite on n_bounded coordinates (strictly containing a
    feasible point of the equalities) and sentinels elsewhere, keeping the
    KKT enumeration oracle tractable.
    """
    S = rng.standard_normal((dim, dim))
    quad = S.T @ S / dim + np.eye(dim)
    lin = rng.standard_normal(dim)
    eq_mat = rng.standard_normal((n_eq, dim))
    x_feas = rng.standard_normal(dim)
    eq_vec = eq_mat @ x_feas

    lo = np.full(dim, -BOUND_SENTINEL)
    hi = np.full(dim, BOUND_SENTINEL)
    bounded = rng.choice(dim, size=n_bounded, replace=False)
    lo[bounded] = x_feas[bounded] - rng.uniform(0.5, 2.0, n_bounded)
    hi[bounded] = x_feas[bounded] + rng.uniform(0.5, 2.0, n_bounded)
    ineq_mat = np.vstack([np.eye(dim), -np.eye(dim)])
    ineq_vec = np.concatenate([hi, -lo])

    if sel_rows:
        sel = np.zeros((sel_rows, dim))
        for r, idx in enumerate(rng.choice(dim, size=sel_rows, replace=False)):
            sel[r, idx] = 1.0
    else:
        sel = np.zeros((0, dim))
    return PrimalAgentQp(quad, lin, eq_mat, eq_vec, ineq_mat, ineq_vec,
                         sel, alpha)


def primal_to_dense(primal, bound_cut=1e8):
    """Oracle mirror of a PrimalAgentQp.

    Sentinel box rows (|rhs| >= bound_cut) are dropped as never-active; a
    positive lasso weight is unrolled into epigraph variables v with
    +-(sel x) <= v and alpha * sum(v) in the objective.
    """
    keep = np.abs(primal.ineq_vec) < bound_cut
    ineq_mat = primal.ineq_mat[keep]
    ineq_vec = primal.ineq_vec[keep]
    d = primal.quad_mat.shape[0]
    s = primal.sel_mat.shape[0]
    if primal.alpha == 0.0 or s == 0:
        return DenseQp(primal.quad_mat, primal.lin_vec,
                       eq_mat=primal.eq_mat, eq_vec=primal.eq_vec,
                       ineq_mat=ineq_mat, ineq_vec=ineq_vec)
    quad = np.zeros((d + s, d + s))
    quad[:d, :d] = primal.quad_mat
    lin = np.concatenate([primal.lin_vec, np.full(s, primal.alpha)])
    eq_mat = np.hstack([primal.eq_mat, np.zeros((primal.eq_mat.shape[0], s))])
    rows = [np.hstack([ineq_mat, np.zeros((ineq_mat.shape[0], s))]),
            np.hstack([primal.sel_mat, -np.eye(s)]),
            np.hstack([-primal.sel_mat, -np.eye(s)])]
    vec = np.concatenate([ineq_vec, np.zeros(2 * s)])
    return DenseQp(quad, lin, eq_mat=eq_mat, eq_vec=primal.eq_vec,
                   ineq_mat=np.vstack(rows), ineq_vec=vec)
