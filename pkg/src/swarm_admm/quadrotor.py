"""Quadrotor plant: nonlinear dynamics, rotor mixing, SDC linearization.

State ordering is x = (p, v, zeta, omega) with zeta = (phi, theta, psi)
Euler angles and omega the body rates, 12 states total.  The control input
is the 4-vector of rotor force deviations du about the gravity-offset
equilibrium, so the constant input matrix maps u_eq + du.

Rotor drag, aerodynamic and gyroscopic effects are not modeled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import SystemModel

GRAVITY_AXIS = np.array([0.0, 0.0, 1.0])


class GimbalLockError(ValueError):
    """Pitch at +-pi/2 makes the Euler-rate matrix singular."""


@dataclass(frozen=True)
class QuadParams:
    """Physical and sampling parameters of one quadrotor.

    Defaults give an equilibrium rotor force of mass*g/4 = 1.96 N, matching
    the +-1.96 N deviation bounds used by the swarm scenarios.
    """

    mass: float = 0.8              # kg
    gravity: float = 9.8           # m/s^2
    inertia: tuple = (5e-3, 5e-3, 9e-3)   # Jx, Jy, Jz, kg m^2
    arm_length: float = 0.2        # rotor-to-center distance, m
    torque_coeff: float = 0.1      # yaw moment arm per rotor force, m
    rotor_momentum_ratio: float = 0.01
    dt: float = 0.05               # s
    du_min: tuple = (-1.96, -1.96, -1.96, -1.96)   # N
    du_max: tuple = (1.96, 1.96, 1.96, 1.96)       # N

    def __post_init__(self):
        if min(self.mass, self.arm_length, self.dt, *self.inertia) <= 0:
            raise ValueError("mass, inertia, arm length and dt must be positive")
        if np.any(np.asarray(self.du_min) > np.asarray(self.du_max)):
            raise ValueError("du_min exceeds du_max")

    @property
    def inertia_diag(self) -> np.ndarray:
        return np.asarray(self.inertia, dtype=float)


@dataclass(frozen=True)
class QuadState:
    """Position, velocity, Euler angles and body rates of one vehicle."""

    p: np.ndarray
    v: np.ndarray
    zeta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        for name in ("p", "v", "zeta", "omega"):
            vec = np.asarray(getattr(self, name), dtype=float).reshape(3)
            object.__setattr__(self, name, vec)
        phi, theta, psi = self.zeta
        if abs(phi) > np.pi or abs(psi) > np.pi:
            raise ValueError("roll/yaw angle outside [-pi, pi]")
        if abs(theta) >= np.pi / 2:
            raise GimbalLockError("pitch magnitude at or beyond pi/2")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.zeta, self.omega])

    @classmethod
    def from_vector(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float).reshape(12)
        return cls(x[0:3], x[3:6], x[6:9], x[9:12])


def _state_vector(state) -> np.ndarray:
    if isinstance(state, QuadState):
        return state.as_vector()
    return np.asarray(state, dtype=float).reshape(12)


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def rotation_matrices(zeta) -> tuple[np.ndarray, np.ndarray]:
    """Euler rotation matrix and Euler-rate matrix for angles (phi, theta, psi).

    Raises GimbalLockError when the pitch is close enough to +-pi/2 that the
    rate matrix (which contains sec(theta)) is numerically singular.
    """
    phi, theta, psi = np.asarray(zeta, dtype=float).reshape(3)
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    if abs(cth) < 1e-9:
        raise GimbalLockError(f"pitch {theta} is at the Euler singularity")
    R = np.array([
        [cth * cpsi, cth * spsi, -sth],
        [sth * cpsi * sphi - spsi * cphi, sth * spsi * sphi + cpsi * cphi, cth * sphi],
        [sth * cpsi * cphi + spsi * sphi, sth * spsi * cphi - cpsi * sphi, cth * cphi],
    ])
    sec = 1.0 / cth
    W = np.array([
        [1.0, sphi * sth * sec, cphi * sth * sec],
        [0.0, cphi, -sphi],
        [0.0, sphi * sec, cphi * sec],
    ])
    return R, W


def mixer(forces, params: QuadParams) -> tuple[float, np.ndarray]:
    """Map the four rotor forces to total thrust and the body torque vector."""
    F = np.asarray(forces, dtype=float).reshape(4)
    L = params.arm_length
    c = params.torque_coeff
    thrust = -np.sum(F)
    torque = np.array([
        L * (F[3] - F[1]),
        L * (F[0] - F[2]),
        c * (F[1] + F[3] - F[0] - F[2]),
    ])
    return thrust, torque


def equilibrium_input(params: QuadParams) -> np.ndarray:
    """Rotor forces offsetting gravity: mass * g / 4 on each rotor."""
    return np.full(4, params.mass * params.gravity / 4.0)


def input_matrix(params: QuadParams) -> np.ndarray:
    """Constant 12x4 map from rotor forces to state derivatives."""
    Jx, Jy, Jz = params.inertia_diag
    L = params.arm_length
    gam = params.rotor_momentum_ratio
    B = np.zeros((12, 4))
    B[5, :] = -1.0 / params.mass
    B[9, :] = [0.0, -L / Jx, 0.0, L / Jx]
    B[10, :] = [L / Jy, 0.0, -L / Jy, 0.0]
    B[11, :] = [-gam / Jz, gam / Jz, -gam / Jz, gam / Jz]
    return B


def continuous_dynamics(state, du, params: QuadParams) -> np.ndarray:
    """Time derivative of the 12-state vector under rotor deviation du.

    The velocity row carries gravity through the attitude (g R e) while the
    rotor forces u_eq + du enter through the constant input matrix, so the
    zero state with zero deviation is an exact equilibrium.
    """
    x = _state_vector(state)
    du = np.asarray(du, dtype=float).reshape(4)
    v, zeta, omega = x[3:6], x[6:9], x[9:12]
    R, W = rotation_matrices(zeta)
    J = params.inertia_diag
    u = equilibrium_input(params) + du
    xdot = np.empty(12)
    xdot[0:3] = R.T @ v
    xdot[3:6] = -np.cross(omega, v) + params.gravity * (R @ GRAVITY_AXIS)
    xdot[6:9] = W @ omega
    xdot[9:12] = -np.cross(omega, J * omega) / J
    return xdot + input_matrix(params) @ u


def _sin_over_x(x: float) -> float:
    # sin(x)/x with series fallback near zero
    if abs(x) < 1e-4:
        return 1.0 - x * x / 6.0
    return np.sin(x) / x


def _cos_minus_one_over_x(x: float) -> float:
    # (cos(x)-1)/x with series fallback near zero
    if abs(x) < 1e-4:
        return -x / 2.0 + x ** 3 / 24.0
    return (np.cos(x) - 1.0) / x


def sdc_linearize(state, params: QuadParams):
    """State-dependent factorization A_c(x) x + B_c (u_eq + du) + b_const = f(x, du).

    Returns (A_c, B_c, b_const).  The rotation acts on velocity, the bilinear
    cross terms act on the trailing rate factor, and the attitude-dependent
    gravity g(R - I)e is expressed through sin(x)/x style coefficients on the
    roll and pitch angles, leaving the constant g e in b_const.
    """
    x = _state_vector(state)
    zeta, omega = x[6:9], x[9:12]
    phi, theta = zeta[0], zeta[1]
    R, W = rotation_matrices(zeta)
    g = params.gravity
    J = params.inertia_diag

    A_c = np.zeros((12, 12))
    A_c[0:3, 3:6] = R.T
    A_c[3:6, 3:6] = -_skew(omega)
    # gravity tilt terms: g(Re - e) as coefficients on phi and theta
    A_c[3, 7] = -g * _sin_over_x(theta)
    A_c[4, 6] = g * np.cos(theta) * _sin_over_x(phi)
    A_c[5, 6] = g * _cos_minus_one_over_x(phi)
    A_c[5, 7] = g * np.cos(phi) * _cos_minus_one_over_x(theta)
    A_c[6:9, 9:12] = W
    A_c[9:12, 9:12] = -_skew(omega) * J[np.newaxis, :] / J[:, np.newaxis]

    b_const = np.zeros(12)
    b_const[3:6] = g * GRAVITY_AXIS
    return A_c, input_matrix(params), b_const


def discretize(A_c, B_c, b_const, dt: float) -> tuple[SystemModel, np.ndarray]:
    """Forward-Euler discretization: A = I + dt A_c, B = dt B_c, offset dt b."""
    if dt <= 0:
        raise ValueError("sampling time must be positive")
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    model = SystemModel(np.eye(A_c.shape[0]) + dt * A_c, dt * np.atleast_2d(B_c))
    return model, dt * np.asarray(b_const, dtype=float).reshape(-1)


def linearize_discrete(state, params: QuadParams) -> tuple[SystemModel, np.ndarray]:
    """Discrete model in the deviation input du at the given state.

    Folds B_c u_eq into the affine offset; by the choice of u_eq that offset
    cancels gravity exactly, so the returned offset is zero at any state.
    """
    A_c, B_c, b_const = sdc_linearize(state, params)
    return discretize(A_c, B_c, b_const + B_c @ equilibrium_input(params), params.dt)


def rk4_step(x, du, params: QuadParams, dt: float | None = None) -> np.ndarray:
    """One classical Runge-Kutta step of the nonlinear plant."""
    h = params.dt if dt is None else dt
    x = _state_vector(x)
    k1 = continuous_dynamics(x, du, params)
    k2 = continuous_dynamics(x + 0.5 * h * k1, du, params)
    k3 = continuous_dynamics(x + 0.5 * h * k2, du, params)
    k4 = continuous_dynamics(x + h * k3, du, params)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
