"""Per-agent ADMM subproblem: boxed lasso QP solved through its dual.

The subproblem couples the condensed tracking objective with the consensus
penalty.  Its dual is a quadratic over a simple box (equality multipliers
free, box-constraint multipliers nonnegative, lasso multipliers inside the
l-inf ball of radius alpha), which an accelerated projected-gradient method
handles with nothing but matrix-vector products.  The gradient of the dual
is affine in mu, so the extrapolated gradient comes for free from the two
previous gradients; each iteration costs exactly two products with the
stacked constraint matrix.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .dynamics import CondensedMpc


@dataclass(frozen=True)
class PrimalAgentQp:
    """min xi' quad xi + lin' xi + alpha ||sel xi||_1
    s.t.  eq_mat xi = eq_vec,  ineq_mat xi <= ineq_vec.

    assemble_primal() produces the MPC-structured instance (eq_mat = [-I, H],
    ineq_mat the stacked +-identity box, sel the input extractor); arbitrary
    conforming blocks are accepted so small hand instances can exercise the
    same solver path.
    """

    quad_mat: np.ndarray
    lin_vec: np.ndarray
    eq_mat: np.ndarray
    eq_vec: np.ndarray
    ineq_mat: np.ndarray
    ineq_vec: np.ndarray
    sel_mat: np.ndarray
    alpha: float

    def __post_init__(self):
        d = self.quad_mat.shape[0]
        if self.quad_mat.shape != (d, d):
            raise ValueError("quadratic matrix must be square")
        if self.lin_vec.shape != (d,):
            raise ValueError("linear term dimension mismatch")
        for mat, vec, name in ((self.eq_mat, self.eq_vec, "eq"),
                               (self.ineq_mat, self.ineq_vec, "ineq")):
            if mat.shape[1] != d or vec.shape != (mat.shape[0],):
                raise ValueError(f"{name} block dimensions inconsistent")
        if self.sel_mat.shape[1] != d:
            raise ValueError("selection block dimensions inconsistent")
        if self.alpha < 0:
            raise ValueError("lasso weight must be nonnegative")

    def objective(self, xi: np.ndarray) -> float:
        return float(xi @ self.quad_mat @ xi + self.lin_vec @ xi
                     + self.alpha * np.abs(self.sel_mat @ xi).sum())


class _QuadInverse:
    """Action of the inverse of the (positive definite) quadratic matrix."""

    def __init__(self, quad_mat: np.ndarray):
        diag = np.diag(quad_mat)
        if np.count_nonzero(quad_mat - np.diag(diag)) == 0:
            if diag.min() <= 0:
                raise ValueError("quadratic matrix is not positive definite "
                                 "(is the penalty parameter positive?)")
            self._inv_diag = 1.0 / diag
            self._chol = None
        else:
            try:
                self._chol = scipy.linalg.cho_factor(quad_mat, lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise ValueError("quadratic matrix is not positive definite "
                                 "(is the penalty parameter positive?)") from exc
            self._inv_diag = None

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self._inv_diag is not None:
            return self._inv_diag * v
        return scipy.linalg.cho_solve(self._chol, v)


@dataclass(frozen=True)
class DualAgentQp:
    """Dual data: min 1/4 (S'mu + q)' Qinv (S'mu + q) + <w, mu> over a box.

    S stacks the equality, inequality and selection blocks; the box keeps
    equality multipliers free, inequality multipliers nonnegative and
    selection multipliers within [-alpha, alpha].
    """

    stack: scipy.sparse.csr_matrix          # S, 3-block stacking
    stack_t: scipy.sparse.csr_matrix        # S transpose, precomputed
    w_vec: np.ndarray
    lin_vec: np.ndarray
    quad_inv: _QuadInverse
    lo: np.ndarray
    hi: np.ndarray
    block_sizes: tuple                      # (n_eq, n_ineq, n_sel)
    n_primal: int

    def project(self, mu: np.ndarray) -> np.ndarray:
        return np.clip(mu, self.lo, self.hi)

    def grad_and_value(self, mu: np.ndarray) -> tuple[np.ndarray, float]:
        t = self.stack_t @ mu + self.lin_vec
        qinv_t = self.quad_inv.apply(t)
        grad = 0.5 * (self.stack @ qinv_t) + self.w_vec
        value = 0.25 * float(t @ qinv_t) + float(self.w_vec @ mu)
        return grad, value

    def objective(self, mu: np.ndarray) -> float:
        return self.grad_and_value(mu)[1]

    def lipschitz(self, iters: int = 50) -> float:
        """Largest eigenvalue of 1/2 S Qinv S' by power iteration."""
        dim = self.stack.shape[0]
        v = 1.0 + 0.01 * np.sin(np.arange(dim))
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = 0.5 * (self.stack @ self.quad_inv.apply(self.stack_t @ v))
            nrm = np.linalg.norm(w)
            if nrm == 0.0:
                return 1.0
            lam = float(v @ w)
            v = w / nrm
        return max(lam, 1e-12)


@dataclass
class BoxQpResult:
    mu: np.ndarray
    converged: bool
    iterations: int
    residual: float
    objective: float
    history: list | None = None    # accepted objective values, when recorded


def assemble_primal(condensed: CondensedMpc, x_t: np.ndarray, z_i: np.ndarray,
                    lam_i: np.ndarray, sigma: float,
                    affine_offset: np.ndarray | None = None) -> PrimalAgentQp:
    """Build one agent's subproblem for consensus target z_i, multiplier lam_i.

    The consensus penalty (sigma/2)||xi - beta||^2 with beta = z_i - lam_i/sigma
    lands in the quadratic diagonal and the linear term; the dynamics equality
    right-hand side is -G x_t (minus the stacked affine offset if the
    discretization produced one).
    """
    if sigma <= 0:
        raise ValueError("penalty parameter must be positive")
    nT = condensed.n * condensed.T
    mT = condensed.m * condensed.T
    d = nT + mT
    z_i = np.asarray(z_i, dtype=float).reshape(d)
    lam_i = np.asarray(lam_i, dtype=float).reshape(d)
    x_t = np.asarray(x_t, dtype=float).reshape(condensed.n)

    beta = z_i - lam_i / sigma
    quad = np.zeros((d, d))
    quad[:nT, :nT] = condensed.Q
    quad[nT:, nT:] = condensed.R
    quad[np.diag_indices(d)] += sigma / 2.0
    lin = -np.concatenate([2.0 * condensed.Q @ condensed.r, np.zeros(mT)]) - sigma * beta

    eq_mat = np.hstack([-np.eye(nT), condensed.H])
    eq_vec = -condensed.G @ x_t
    if affine_offset is not None:
        eq_vec = eq_vec - np.asarray(affine_offset, dtype=float).reshape(nT)
    ineq_mat = np.vstack([np.eye(d), -np.eye(d)])
    ineq_vec = np.concatenate([condensed.x_hi, condensed.u_hi,
                               -condensed.x_lo, -condensed.u_lo])
    sel_mat = np.hstack([np.zeros((mT, nT)), np.eye(mT)])
    return PrimalAgentQp(quad, lin, eq_mat, eq_vec, ineq_mat, ineq_vec,
                         sel_mat, condensed.alpha)


def dualize(primal: PrimalAgentQp) -> DualAgentQp:
    """Stack the constraint blocks and cache the quadratic factorization."""
    n_eq = primal.eq_mat.shape[0]
    n_ineq = primal.ineq_mat.shape[0]
    n_sel = primal.sel_mat.shape[0]
    stack = scipy.sparse.csr_matrix(
        scipy.sparse.vstack([
            scipy.sparse.csr_matrix(primal.eq_mat),
            scipy.sparse.csr_matrix(primal.ineq_mat),
            scipy.sparse.csr_matrix(primal.sel_mat),
        ]))
    w_vec = np.concatenate([primal.eq_vec, primal.ineq_vec, np.zeros(n_sel)])
    lo = np.concatenate([np.full(n_eq, -np.inf), np.zeros(n_ineq),
                         np.full(n_sel, -primal.alpha)])
    hi = np.concatenate([np.full(n_eq, np.inf), np.full(n_ineq, np.inf),
                         np.full(n_sel, primal.alpha)])
    return DualAgentQp(
        stack=stack,
        stack_t=scipy.sparse.csr_matrix(stack.T),
        w_vec=w_vec,
        lin_vec=np.array(primal.lin_vec, dtype=float),
        quad_inv=_QuadInverse(primal.quad_mat),
        lo=lo,
        hi=hi,
        block_sizes=(n_eq, n_ineq, n_sel),
        n_primal=primal.quad_mat.shape[0],
    )


def project_onto_box(mu: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Clamp onto the dual feasible box; idempotent and non-expansive."""
    return np.clip(mu, lo, hi)


def solve_box_qp(dual: DualAgentQp, tol: float = 1e-6, max_iter: int = 5000,
                 mu0: np.ndarray | None = None,
                 record_history: bool = False) -> BoxQpResult:
    """Accelerated projected gradient with function-value restart.

    Stops when the fixed-point residual ||mu - P(mu - s grad)|| with step
    s = 1/L drops to tol; on iteration exhaustion the best iterate seen is
    returned with converged=False.  A step that would increase the objective
    triggers a restart (plain projected-gradient step from the last
    iterate), so accepted objective values never increase.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    step = 1.0 / (1.05 * dual.lipschitz())
    dim = dual.stack.shape[0]
    mu = dual.project(np.zeros(dim) if mu0 is None else np.asarray(mu0, dtype=float))
    g_mu, f_mu = dual.grad_and_value(mu)
    history = [f_mu] if record_history else None
    residual = float(np.linalg.norm(mu - dual.project(mu - step * g_mu)))
    if residual <= tol:
        return BoxQpResult(mu, True, 0, residual, f_mu, history)
    best_mu, best_f, best_res = mu, f_mu, residual
    y, g_y = mu, g_mu
    t_acc = 1.0

    for k in range(1, max_iter + 1):
        mu_new = dual.project(y - step * g_y)
        g_new, f_new = dual.grad_and_value(mu_new)
        if f_new > f_mu:
            # restart: plain projected-gradient step from the last iterate
            t_acc = 1.0
            mu_new = dual.project(mu - step * g_mu)
            g_new, f_new = dual.grad_and_value(mu_new)
        residual = float(np.linalg.norm(mu_new - dual.project(mu_new - step * g_new)))
        if record_history:
            history.append(f_new)
        if f_new < best_f:
            best_mu, best_f, best_res = mu_new, f_new, residual
        if residual <= tol:
            return BoxQpResult(mu_new, True, k, residual, f_new, history)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        beta = (t_acc - 1.0) / t_next
        y = mu_new + beta * (mu_new - mu)
        g_y = g_new + beta * (g_new - g_mu)  # gradient is affine in mu
        mu, g_mu, f_mu, t_acc = mu_new, g_new, f_new, t_next

    return BoxQpResult(best_mu, False, max_iter, best_res, best_f, history)


def recover_primal(mu: np.ndarray, dual: DualAgentQp) -> np.ndarray:
    """Map a dual point back to the primal: xi = -1/2 Qinv (S' mu + q)."""
    return -0.5 * dual.quad_inv.apply(dual.stack_t @ mu + dual.lin_vec)


def update_c_block(z_c: np.ndarray, lam_c: np.ndarray, sigma: float) -> np.ndarray:
    """Closed-form update of the binary-indicator block (no rounding here)."""
    if sigma <= 0:
        raise ValueError("penalty parameter must be positive")
    return np.asarray(z_c, dtype=float) - np.asarray(lam_c, dtype=float) / sigma


@dataclass
class AgentSolution:
    x: np.ndarray
    u: np.ndarray
    mu: np.ndarray
    converged: bool
    iterations: int


def solve_agent_subproblem(condensed: CondensedMpc, x_t: np.ndarray,
                           z_i: np.ndarray, lam_i: np.ndarray, sigma: float,
                           tol: float = 1e-6, max_iter: int = 5000,
                           warm_mu: np.ndarray | None = None) -> AgentSolution:
    """Solve one agent's subproblem end to end and split the minimizer."""
    primal = assemble_primal(condensed, x_t, z_i, lam_i, sigma)
    dual = dualize(primal)
    result = solve_box_qp(dual, tol=tol, max_iter=max_iter, mu0=warm_mu)
    xi = recover_primal(result.mu, dual)
    nT = condensed.n * condensed.T
    return AgentSolution(xi[:nT], xi[nT:], result.mu, result.converged,
                         result.iterations)


def replace_lin_vec(dual: DualAgentQp, lin_vec: np.ndarray) -> DualAgentQp:
    """Same dual data with a new linear term (constraints and box unchanged)."""
    return dataclasses.replace(dual, lin_vec=np.asarray(lin_vec, dtype=float))
