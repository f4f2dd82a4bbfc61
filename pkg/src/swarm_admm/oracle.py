"""Brute-force reference solvers, used only by the test suite.

Nothing here is imported by the production modules: the point is to check
the fast solvers against independent enumeration.  kkt_enumerate walks all
inequality active sets of a dense QP; brute_force_coupling enumerates the
binary patterns of small coupling instances and projects through
kkt_enumerate rather than the coupling module's own machinery.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .coupling import DIRS_PER_PAIR, CapExceededError, CouplingInstance

AXES = 3


class QpInfeasibleError(ValueError):
    """No feasible point satisfies the constraints."""


@dataclass(frozen=True)
class DenseQp:
    """min x' P x + q' x  s.t.  A_eq x = b_eq,  A_in x <= b_in."""

    quad: np.ndarray
    lin: np.ndarray
    eq_mat: np.ndarray = field(default=None)
    eq_vec: np.ndarray = field(default=None)
    ineq_mat: np.ndarray = field(default=None)
    ineq_vec: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.quad.shape[0]
        if self.quad.shape != (n, n) or self.lin.shape != (n,):
            raise ValueError("quadratic/linear dimensions inconsistent")
        for attr, rows in (("eq", "eq"), ("ineq", "ineq")):
            mat = getattr(self, f"{attr}_mat")
            vec = getattr(self, f"{attr}_vec")
            if mat is None:
                object.__setattr__(self, f"{attr}_mat", np.zeros((0, n)))
                object.__setattr__(self, f"{attr}_vec", np.zeros(0))
            elif mat.shape[1] != n or vec.shape != (mat.shape[0],):
                raise ValueError(f"{attr} block dimensions inconsistent")

    def objective(self, x: np.ndarray) -> float:
        return float(x @ self.quad @ x + self.lin @ x)


@dataclass
class OracleSolution:
    x: np.ndarray
    objective: float
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray


def kkt_enumerate(qp: DenseQp, cap: int = 1 << 20,
                  feas_tol: float = 1e-9) -> OracleSolution:
    """Global minimizer of a convex dense QP by active-set enumeration.

    Every subset of the inequality rows is treated as active, the resulting
    KKT system solved, and candidates filtered by primal feasibility and
    multiplier sign; the best survivor is the optimum.  Exact for strictly
    convex objectives; singular active sets are skipped (a nondegenerate
    subset always witnesses the optimum).
    """
    n = qp.quad.shape[0]
    n_eq = qp.eq_mat.shape[0]
    n_in = qp.ineq_mat.shape[0]
    if 2 ** n_in > cap:
        raise CapExceededError(f"2^{n_in} active sets exceed cap {cap}")

    best = None
    for mask in range(2 ** n_in):
        active = [i for i in range(n_in) if mask >> i & 1]
        na = len(active)
        dim = n + n_eq + na
        K = np.zeros((dim, dim))
        rhs = np.empty(dim)
        K[:n, :n] = 2.0 * qp.quad
        rhs[:n] = -qp.lin
        if n_eq:
            K[:n, n:n + n_eq] = qp.eq_mat.T
            K[n:n + n_eq, :n] = qp.eq_mat
            rhs[n:n + n_eq] = qp.eq_vec
        if na:
            A_act = qp.ineq_mat[active]
            K[:n, n + n_eq:] = A_act.T
            K[n + n_eq:, :n] = A_act
            rhs[n + n_eq:] = qp.ineq_vec[active]
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        x = sol[:n]
        mult_in = np.zeros(n_in)
        mult_in[active] = sol[n + n_eq:]
        if np.any(mult_in[active] < -feas_tol):
            continue
        if n_in and np.any(qp.ineq_mat @ x - qp.ineq_vec > feas_tol):
            continue
        if n_eq and np.any(np.abs(qp.eq_mat @ x - qp.eq_vec) > feas_tol):
            continue
        obj = qp.objective(x)
        if best is None or obj < best.objective:
            best = OracleSolution(x, obj, sol[n:n + n_eq].copy(), mult_in)
    if best is None:
        raise QpInfeasibleError("no active set yields a feasible KKT point")
    return best


def candidate_patterns() -> list:
    """All 63 per-cell binary patterns with at most five entries set."""
    return [np.array(bits, dtype=float)
            for bits in itertools.product((0.0, 1.0), repeat=DIRS_PER_PAIR)
            if sum(bits) <= 5]


def _axis_projection(coords: np.ndarray, edges, d: float):
    """Exact per-axis projection via kkt_enumerate; None when infeasible."""
    n = coords.shape[0]
    rows = np.zeros((len(edges), n))
    for r, (hi, lo) in enumerate(edges):
        rows[r, lo] = 1.0
        rows[r, hi] = -1.0
    qp = DenseQp(np.eye(n), -2.0 * coords, ineq_mat=rows,
                 ineq_vec=np.full(len(edges), -d))
    try:
        sol = kkt_enumerate(qp)
    except QpInfeasibleError:
        return None
    cost = float(np.sum((sol.x - coords) ** 2))
    return sol.x, cost


def brute_force_coupling(instance: CouplingInstance, cap: int = 10 ** 6) -> np.ndarray:
    """Exact minimizer of the coupling projection on desk-scale instances.

    Enumerates the 63 admissible binary patterns per (pair, timestep);
    timesteps decompose (no constraint couples them), so the product runs
    per timestep with per-axis projections memoized across combinations.
    """
    lay = instance.layout
    cells = candidate_patterns()
    if len(cells) ** lay.n_pairs > cap:
        raise CapExceededError(
            f"{len(cells)}^{lay.n_pairs} pattern combinations exceed cap {cap}")
    pairs = lay.pairs
    gamma_c = lay.binaries(instance.gamma)
    positions = lay.positions(instance.gamma)
    d = instance.safe_distance
    z = instance.gamma.copy()

    for t in range(lay.T):
        binary_cost = [
            [float(np.sum((cell - gamma_c[p, t]) ** 2)) for cell in cells]
            for p in range(lay.n_pairs)
        ]
        memo: dict = {}

        def axis_solution(axis, combo, t=t):
            key = (axis, tuple((cells[ci][2 * axis], cells[ci][2 * axis + 1])
                               for ci in combo))
            if key not in memo:
                edges = []
                for k, (i, j) in enumerate(pairs):
                    cell = cells[combo[k]]
                    if cell[2 * axis] == 0.0:
                        edges.append((i, j))
                    if cell[2 * axis + 1] == 0.0:
                        edges.append((j, i))
                memo[key] = _axis_projection(positions[:, t, axis], edges, d)
            return memo[key]

        best = None
        for combo in itertools.product(range(len(cells)), repeat=lay.n_pairs):
            cost = sum(binary_cost[p][combo[p]] for p in range(lay.n_pairs))
            if best is not None and cost >= best[0]:
                continue
            coords = []
            for axis in range(AXES):
                sol = axis_solution(axis, combo)
                if sol is None:
                    cost = None
                    break
                coords.append(sol[0])
                cost += sol[1]
            if cost is None:
                continue
            if best is None or cost < best[0]:
                best = (cost, combo, coords)
        if best is None:
            raise QpInfeasibleError(f"no feasible combination at timestep {t}")
        _, combo, coords = best
        for p in range(lay.n_pairs):
            base = lay.c_offset + p * DIRS_PER_PAIR * lay.T + t * DIRS_PER_PAIR
            z[base:base + DIRS_PER_PAIR] = cells[combo[p]]
        for axis in range(AXES):
            for a in range(lay.N):
                z[lay.pos_index(a, t, axis)] = coords[axis][a]
    return z


def coupling_objective(instance: CouplingInstance, z: np.ndarray) -> float:
    """Projection objective ||z - gamma||^2."""
    return float(np.sum((z - instance.gamma) ** 2))


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad
