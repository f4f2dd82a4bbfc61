"""Discrete linear dynamics, horizon condensing, and block weight assembly.

One agent, one receding-horizon step: the model (A, B) is held constant over
the prediction horizon and the stacked prediction map x = G x_t + H u is
built densely (desk scale, nT of a few hundred at most).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SystemModel:
    """Discrete LTI pair x(k+1) = A x(k) + B u(k).

    Attributes
    ----------
    A : (n, n) ndarray
        State transition matrix.
    B : (n, m) ndarray
        Input map.
    """

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(
                f"B row count {B.shape[0]} does not match state dimension {A.shape[0]}"
            )
        if A.shape[0] < 1 or B.shape[1] < 1:
            raise ValueError("state and input dimensions must be at least 1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class CondensedMpc:
    """Condensed horizon data for one agent.

    G, H map the current state and the stacked input sequence to the stacked
    state sequence (x(t+1), ..., x(t+T)).  Q, R are the block-diagonal stage
    weights over that stacking, r the stacked reference, and the bound
    vectors describe the elementwise state/input boxes.  Unbounded
    coordinates use the +-BOUND_SENTINEL convention so the box always has
    the full 2(m+n)T rows.
    """

    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    r: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    alpha: float
    T: int
    n: int = field(init=False)
    m: int = field(init=False)

    def __post_init__(self):
        nT, n = self.G.shape
        mT = self.H.shape[1]
        if self.T < 1 or nT != n * self.T or mT % self.T != 0:
            raise ValueError("G/H shapes inconsistent with horizon length")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", mT // self.T)
        if self.H.shape[0] != nT:
            raise ValueError("G and H row counts differ")
        for name, vec, dim in (
            ("r", self.r, nT),
            ("x_lo", self.x_lo, nT),
            ("x_hi", self.x_hi, nT),
            ("u_lo", self.u_lo, mT),
            ("u_hi", self.u_hi, mT),
        ):
            if vec.shape != (dim,):
                raise ValueError(f"{name} must have shape ({dim},), got {vec.shape}")
        if np.any(self.x_lo > self.x_hi) or np.any(self.u_lo > self.u_hi):
            raise ValueError("lower bounds exceed upper bounds")
        if self.alpha < 0:
            raise ValueError("lasso weight must be nonnegative")


#: magnitude used for coordinates with no physical bound
BOUND_SENTINEL = 1e9


def condense(model: SystemModel, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Build the stacked prediction operators (G, H) for a horizon of T steps.

    G stacks A, A^2, ..., A^T vertically; block (i, j) of H is A^(i-j) B for
    i >= j and zero otherwise, so that the stacked states satisfy
    x = G x_t + H u for any input stacking u.  Powers of A are accumulated
    incrementally for exactness.
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    n, m = model.n, model.m
    G = np.zeros((n * T, n))
    H = np.zeros((n * T, m * T))
    # A_pow_B[k] = A^k B, A_pow[k] = A^(k+1)
    Apow = np.eye(n)
    ApowB = [model.B]
    for i in range(T):
        Apow = model.A @ Apow
        G[i * n:(i + 1) * n, :] = Apow
        if i + 1 < T:
            ApowB.append(model.A @ ApowB[-1])
    for i in range(T):
        for j in range(i + 1):
            H[i * n:(i + 1) * n, j * m:(j + 1) * m] = ApowB[i - j]
    return G, H


def rollout(model: SystemModel, x0: np.ndarray, u_seq) -> np.ndarray:
    """Step the model forward, returning the T states x_1..x_T as rows.

    Independent of condense(): used as its oracle.
    """
    x = np.asarray(x0, dtype=float).reshape(model.n)
    out = []
    for u in u_seq:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape != (model.m,):
            raise ValueError(f"input has dimension {u.shape[0]}, expected {model.m}")
        x = model.A @ x + model.B @ u
        out.append(x)
    return np.array(out)


def _check_weight(name: str, W: np.ndarray) -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] != W.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(W, W.T, atol=1e-12, rtol=0.0):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(W).min() < -1e-10:
        raise ValueError(f"{name} must be positive semi-definite")
    return W


def build_weights(Q_stage: np.ndarray, Q_term: np.ndarray, R_stage: np.ndarray,
                  T: int) -> tuple[np.ndarray, np.ndarray]:
    """Assemble the horizon weights Q = diag(Q_stage x(T-1), Q_term) and
    R = diag(R_stage x T).

    Inputs must be symmetric positive semi-definite; anything else is
    rejected here rather than surfacing later as an indefinite QP.
    """
    Q_stage = _check_weight("Q_stage", Q_stage)
    Q_term = _check_weight("Q_term", Q_term)
    R_stage = _check_weight("R_stage", R_stage)
    if Q_term.shape != Q_stage.shape:
        raise ValueError("Q_term and Q_stage dimensions differ")
    n = Q_stage.shape[0]
    m = R_stage.shape[0]
    Q = np.zeros((n * T, n * T))
    for i in range(T - 1):
        Q[i * n:(i + 1) * n, i * n:(i + 1) * n] = Q_stage
    Q[(T - 1) * n:, (T - 1) * n:] = Q_term
    R = np.zeros((m * T, m * T))
    for i in range(T):
        R[i * m:(i + 1) * m, i * m:(i + 1) * m] = R_stage
    return Q, R


def condense_offset(model: SystemModel, T: int, offset: np.ndarray) -> np.ndarray:
    """Stacked contribution of a constant per-step affine offset.

    For x(k+1) = A x(k) + B u(k) + offset the prediction becomes
    x = G x_t + H u + w with w returned here (row-block i holds
    sum_{j<=i} A^j offset).
    """
    offset = np.asarray(offset, dtype=float).reshape(model.n)
    w = np.zeros(model.n * T)
    acc = offset.copy()
    for i in range(T):
        w[i * model.n:(i + 1) * model.n] = acc
        acc = model.A @ acc + offset
    return w
