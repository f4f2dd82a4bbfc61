"""Scenario configuration, reference generation, metrics, and log export.

Scenarios are JSON files with units spelled out in the field names.  The
bundled fig1 scenario reproduces the 21-agent grid geometry: initial
positions on a square yz-grid at x = -2, two shared waypoints at
(-1,-1,-1) and (1,1,1), and final positions mirroring the grid at x = +2.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import BOUND_SENTINEL, SystemModel
from .quadrotor import QuadParams, linearize_discrete, rk4_step

CSV_COLUMNS = ["t", "agent", "px", "py", "pz", "vx", "vy", "vz",
               "phi", "theta", "psi", "wx", "wy", "wz",
               "du1", "du2", "du3", "du4", "admm_iters", "eps_pri", "ms"]

PLANTS = ("quadrotor", "double_integrator")


class ScenarioError(ValueError):
    """Scenario file failed to parse or validate."""


def double_integrator_model(dt: float, axes: int = 3) -> SystemModel:
    """Exact discrete double integrator with n = 2*axes, m = axes."""
    n = 2 * axes
    A = np.eye(n)
    A[:axes, axes:] = dt * np.eye(axes)
    B = np.vstack([0.5 * dt * dt * np.eye(axes), dt * np.eye(axes)])
    return SystemModel(A, B)


@dataclass(frozen=True)
class Waypoint:
    position: np.ndarray
    arrival_step: int

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float).reshape(3))
        if self.arrival_step < 1:
            raise ScenarioError("waypoint arrival_step must be at least 1")


@dataclass(frozen=True)
class AgentSpec:
    initial_state: np.ndarray
    waypoints: tuple

    def __post_init__(self):
        object.__setattr__(self, "initial_state",
                           np.asarray(self.initial_state, dtype=float))
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        steps = [w.arrival_step for w in self.waypoints]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ScenarioError(
                "waypoint arrival_step values must be strictly increasing")


@dataclass(frozen=True)
class Scenario:
    name: str
    plant: str
    agents: tuple
    dt: float = 0.05
    horizon: int = 25
    total_steps: int = 120
    safe_distance: float = 0.2
    big_m: float = 100.0
    sigma: float = 1.0
    eps_stop: float = 0.1
    max_iterations: int = 50
    subproblem_tol: float = 1e-6
    subproblem_max_iter: int = 5000
    lasso_weight: float = 0.0
    Q_stage: np.ndarray = None
    Q_term: np.ndarray = None
    R_stage: np.ndarray = None
    state_lo: np.ndarray = None
    state_hi: np.ndarray = None
    input_lo: np.ndarray = None
    input_hi: np.ndarray = None
    quad_params: QuadParams = field(default_factory=QuadParams)

    def __post_init__(self):
        if self.plant not in PLANTS:
            raise ScenarioError(f"plant must be one of {PLANTS}, got {self.plant!r}")
        if not self.agents:
            raise ScenarioError("scenario needs at least one agent")
        object.__setattr__(self, "agents", tuple(self.agents))
        if self.quad_params.dt != self.dt:
            object.__setattr__(self, "quad_params",
                               dataclasses.replace(self.quad_params, dt=self.dt))
        n, m = self.n, self.m
        state_lo, state_hi = _default_state_bounds(self.plant)
        if self.plant == "quadrotor":
            input_lo = np.asarray(self.quad_params.du_min, dtype=float)
            input_hi = np.asarray(self.quad_params.du_max, dtype=float)
        else:
            input_lo, input_hi = np.full(m, -5.0), np.full(m, 5.0)
        defaults = {
            "Q_stage": _default_q(n), "Q_term": _default_q(n),
            "R_stage": np.zeros((m, m)),
            "state_lo": state_lo, "state_hi": state_hi,
            "input_lo": input_lo, "input_hi": input_hi,
        }
        for key, val in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, val)
            else:
                object.__setattr__(self, key,
                                   np.asarray(getattr(self, key), dtype=float))
        for key, dim in (("Q_stage", (n, n)), ("Q_term", (n, n)),
                         ("R_stage", (m, m)), ("state_lo", (n,)),
                         ("state_hi", (n,)), ("input_lo", (m,)),
                         ("input_hi", (m,))):
            if getattr(self, key).shape != dim:
                raise ScenarioError(f"{key} must have shape {dim}")
        for spec in self.agents:
            if spec.initial_state.shape != (n,):
                raise ScenarioError(
                    f"agent initial_state must have {n} entries")
            if spec.waypoints and spec.waypoints[-1].arrival_step > self.total_steps:
                raise ScenarioError("waypoint arrival_step beyond total_steps")
        if self.dt <= 0 or self.horizon < 1 or self.total_steps < 1:
            raise ScenarioError("dt_s, horizon_steps and total_steps must be positive")
        if self.safe_distance < 0:
            raise ScenarioError("safe_distance_m must be nonnegative")
        if self.big_m <= self.safe_distance:
            raise ScenarioError("big_m must exceed safe_distance_m")
        if self.sigma <= 0 or self.eps_stop <= 0:
            raise ScenarioError("admm sigma and eps_stop must be positive")

    @property
    def n(self) -> int:
        return 12 if self.plant == "quadrotor" else 6

    @property
    def m(self) -> int:
        return 4 if self.plant == "quadrotor" else 3

    @property
    def N(self) -> int:
        return len(self.agents)

    def __eq__(self, other):
        return isinstance(other, Scenario) and scenario_to_dict(self) == scenario_to_dict(other)


def _default_q(n: int) -> np.ndarray:
    # position error only, matching the swarm experiments
    q = np.zeros((n, n))
    q[:3, :3] = np.eye(3)
    return q


def _default_state_bounds(plant: str):
    if plant == "quadrotor":
        lo = np.full(12, -BOUND_SENTINEL)
        hi = np.full(12, BOUND_SENTINEL)
        lo[6:9] = [-np.pi, -np.pi / 2, -np.pi]
        hi[6:9] = [np.pi, np.pi / 2, np.pi]
        return lo, hi
    return np.full(6, -BOUND_SENTINEL), np.full(6, BOUND_SENTINEL)


# -- JSON round trip ---------------------------------------------------------

def _mat_to_json(mat: np.ndarray):
    diag = np.diag(np.diag(mat))
    if np.array_equal(mat, diag):
        return list(np.diag(mat))
    return [list(row) for row in mat]


def _mat_from_json(data, n, name):
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (n,):
            raise ScenarioError(f"{name} diagonal must have {n} entries")
        return np.diag(arr)
    if arr.shape != (n, n):
        raise ScenarioError(f"{name} must be {n}x{n} or a length-{n} diagonal")
    return arr


def scenario_to_dict(s: Scenario) -> dict:
    d = {
        "name": s.name,
        "plant": s.plant,
        "dt_s": s.dt,
        "horizon_steps": s.horizon,
        "total_steps": s.total_steps,
        "safe_distance_m": s.safe_distance,
        "big_m": s.big_m,
        "lasso_weight": s.lasso_weight,
        "admm": {
            "sigma": s.sigma,
            "eps_stop": s.eps_stop,
            "max_iterations": s.max_iterations,
            "subproblem_tol": s.subproblem_tol,
            "subproblem_max_iter": s.subproblem_max_iter,
        },
        "weights": {
            "state_diag": _mat_to_json(s.Q_stage),
            "terminal_diag": _mat_to_json(s.Q_term),
            "input_diag": _mat_to_json(s.R_stage),
        },
        "state_bounds": {"lower": list(s.state_lo), "upper": list(s.state_hi)},
        "input_bounds": {"lower": list(s.input_lo), "upper": list(s.input_hi)},
        "agents": [
            {
                "initial_state": list(a.initial_state),
                "waypoints": [
                    {"position_m": list(w.position), "arrival_step": w.arrival_step}
                    for w in a.waypoints
                ],
            }
            for a in s.agents
        ],
    }
    if s.plant == "quadrotor":
        q = s.quad_params
        d["quad_params"] = {
            "mass_kg": q.mass,
            "gravity_mps2": q.gravity,
            "inertia_kgm2": list(q.inertia),
            "arm_length_m": q.arm_length,
            "torque_coeff_m": q.torque_coeff,
            "rotor_momentum_ratio": q.rotor_momentum_ratio,
        }
    return d


def _require(data: dict, key: str, where: str = "scenario"):
    if key not in data:
        raise ScenarioError(f"missing field '{key}' in {where}")
    return data[key]


def scenario_from_dict(data: dict) -> Scenario:
    plant = _require(data, "plant")
    if plant not in PLANTS:
        raise ScenarioError(f"plant must be one of {PLANTS}, got {plant!r}")
    n = 12 if plant == "quadrotor" else 6
    m = 4 if plant == "quadrotor" else 3
    admm = _require(data, "admm")
    weights = _require(data, "weights")
    agents = []
    for idx, a in enumerate(_require(data, "agents")):
        where = f"agents[{idx}]"
        waypoints = [
            Waypoint(_require(w, "position_m", f"{where}.waypoints"),
                     int(_require(w, "arrival_step", f"{where}.waypoints")))
            for w in _require(a, "waypoints", where)
        ]
        agents.append(AgentSpec(_require(a, "initial_state", where), waypoints))
    quad = QuadParams()
    if plant == "quadrotor" and "quad_params" in data:
        qp = data["quad_params"]
        quad = QuadParams(
            mass=_require(qp, "mass_kg", "quad_params"),
            gravity=_require(qp, "gravity_mps2", "quad_params"),
            inertia=tuple(_require(qp, "inertia_kgm2", "quad_params")),
            arm_length=_require(qp, "arm_length_m", "quad_params"),
            torque_coeff=_require(qp, "torque_coeff_m", "quad_params"),
            rotor_momentum_ratio=_require(qp, "rotor_momentum_ratio", "quad_params"),
            dt=_require(data, "dt_s"),
        )
    bounds = data.get("state_bounds")
    in_bounds = data.get("input_bounds")
    return Scenario(
        name=_require(data, "name"),
        plant=plant,
        agents=agents,
        dt=float(_require(data, "dt_s")),
        horizon=int(_require(data, "horizon_steps")),
        total_steps=int(_require(data, "total_steps")),
        safe_distance=float(_require(data, "safe_distance_m")),
        big_m=float(_require(data, "big_m")),
        sigma=float(_require(admm, "sigma", "admm")),
        eps_stop=float(_require(admm, "eps_stop", "admm")),
        max_iterations=int(_require(admm, "max_iterations", "admm")),
        subproblem_tol=float(admm.get("subproblem_tol", 1e-6)),
        subproblem_max_iter=int(admm.get("subproblem_max_iter", 5000)),
        lasso_weight=float(data.get("lasso_weight", 0.0)),
        Q_stage=_mat_from_json(_require(weights, "state_diag", "weights"), n, "state_diag"),
        Q_term=_mat_from_json(_require(weights, "terminal_diag", "weights"), n, "terminal_diag"),
        R_stage=_mat_from_json(_require(weights, "input_diag", "weights"), m, "input_diag"),
        state_lo=None if bounds is None else np.asarray(_require(bounds, "lower", "state_bounds"), dtype=float),
        state_hi=None if bounds is None else np.asarray(_require(bounds, "upper", "state_bounds"), dtype=float),
        input_lo=None if in_bounds is None else np.asarray(_require(in_bounds, "lower", "input_bounds"), dtype=float),
        input_hi=None if in_bounds is None else np.asarray(_require(in_bounds, "upper", "input_bounds"), dtype=float),
        quad_params=quad,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


def bundled_scenario_path(name: str = "fig1") -> Path:
    return Path(__file__).parent / "scenarios" / f"{name}.json"


# -- scenario generation -----------------------------------------------------

def grid_scenario(agent_count: int = 21, spacing: float = 1.0,
                  safe_distance: float = 0.2, side_count: int | None = None,
                  plant: str = "quadrotor", total_steps: int = 120,
                  horizon: int = 25, dt: float = 0.05, name: str | None = None,
                  **overrides) -> Scenario:
    """Square-grid swarm: initial yz-grid at x = -2, shared waypoints
    (-1,-1,-1) then (1,1,1), final points mirroring the grid at x = +2.

    The grid occupies the first agent_count cells of a side_count x
    side_count grid in row-major order (side defaults to the smallest
    square that fits); arrival steps split the run into three equal
    segments.  Extra keyword overrides pass through to Scenario.
    """
    if spacing <= 0:
        raise ScenarioError("spacing must be positive")
    if agent_count < 1:
        raise ScenarioError("agent_count must be at least 1")
    side = side_count if side_count is not None else math.ceil(math.sqrt(agent_count))
    if side * side < agent_count:
        raise ScenarioError(f"side_count {side} cannot hold {agent_count} agents")
    n = 12 if plant == "quadrotor" else 6
    t1 = total_steps // 3
    t2 = 2 * total_steps // 3
    agents = []
    for idx in range(agent_count):
        row, col = divmod(idx, side)
        y = (col - (side - 1) / 2.0) * spacing
        z = (row - (side - 1) / 2.0) * spacing
        state = np.zeros(n)
        state[:3] = [-2.0, y, z]
        agents.append(AgentSpec(state, [
            Waypoint([-1.0, -1.0, -1.0], t1),
            Waypoint([1.0, 1.0, 1.0], t2),
            Waypoint([2.0, y, z], total_steps),
        ]))
    return Scenario(
        name=name or f"grid-{agent_count}",
        plant=plant, agents=agents, dt=dt, horizon=horizon,
        total_steps=total_steps, safe_distance=safe_distance, **overrides)


# -- references --------------------------------------------------------------

def reference_position(scenario: Scenario, agent: int, step: int) -> np.ndarray:
    """Piecewise-linear reference position for one agent at one step."""
    spec = scenario.agents[agent]
    anchors = [(0, spec.initial_state[:3])]
    anchors += [(w.arrival_step, w.position) for w in spec.waypoints]
    if step <= 0:
        return anchors[0][1].copy()
    for (s0, p0), (s1, p1) in zip(anchors, anchors[1:]):
        if step <= s1:
            frac = (step - s0) / (s1 - s0)
            return p0 + frac * (p1 - p0)
    return anchors[-1][1].copy()


def reference_for(scenario: Scenario, agent: int, t: int) -> np.ndarray:
    """Stacked horizon reference for the MPC problem starting at step t.

    Position entries interpolate the waypoints; every other state entry is
    referenced to zero.
    """
    n = scenario.n
    r = np.zeros(n * scenario.horizon)
    for k in range(scenario.horizon):
        r[k * n:k * n + 3] = reference_position(scenario, agent, t + 1 + k)
    return r


# -- plant stepping ----------------------------------------------------------

def linearize_plant(scenario: Scenario, state: np.ndarray):
    """Per-step discrete model (SystemModel, affine offset)."""
    if scenario.plant == "quadrotor":
        return linearize_discrete(state, scenario.quad_params)
    model = double_integrator_model(scenario.dt)
    return model, np.zeros(6)


def plant_step(scenario: Scenario, state: np.ndarray, du: np.ndarray) -> np.ndarray:
    """Advance the nonlinear plant one sampling period under input du."""
    if scenario.plant == "quadrotor":
        return rk4_step(state, du, scenario.quad_params, scenario.dt)
    model = double_integrator_model(scenario.dt)
    return model.A @ state + model.B @ du


# -- trajectory log ----------------------------------------------------------

@dataclass(frozen=True)
class LogRecord:
    t: int
    agent: int
    state: np.ndarray
    du: np.ndarray
    admm_iters: int
    eps_pri: float
    ms: float

    def __post_init__(self):
        object.__setattr__(self, "state", np.asarray(self.state, dtype=float))
        object.__setattr__(self, "du", np.asarray(self.du, dtype=float))


@dataclass
class TrajectoryLog:
    records: list
    scenario: dict

    def __eq__(self, other):
        return (isinstance(other, TrajectoryLog)
                and log_to_dict(self) == log_to_dict(other))

    @property
    def n_agents(self) -> int:
        return 1 + max(r.agent for r in self.records) if self.records else 0

    def by_step(self):
        """Records grouped per timestep, each sorted by agent index."""
        steps: dict = {}
        for rec in self.records:
            steps.setdefault(rec.t, []).append(rec)
        return [sorted(v, key=lambda r: r.agent) for _, v in sorted(steps.items())]


def log_to_dict(log: TrajectoryLog) -> dict:
    return {
        "scenario": log.scenario,
        "records": [
            {
                "t": r.t, "agent": r.agent,
                "state": list(r.state), "du": list(r.du),
                "admm_iters": r.admm_iters, "eps_pri": r.eps_pri, "ms": r.ms,
            }
            for r in log.records
        ],
    }


def log_from_dict(data: dict) -> TrajectoryLog:
    return TrajectoryLog(
        records=[LogRecord(r["t"], r["agent"], r["state"], r["du"],
                           r["admm_iters"], r["eps_pri"], r["ms"])
                 for r in data["records"]],
        scenario=data["scenario"],
    )


def export_log(log: TrajectoryLog, path, format: str = "csv") -> None:
    """Write the log as CSV (fixed 21-column schema) or JSON.

    CSV pads double-integrator states and inputs with zeros to the
    quadrotor-width columns; JSON keeps raw vectors and round-trips
    exactly through load_log.
    """
    path = Path(path)
    if format == "json":
        path.write_text(json.dumps(log_to_dict(log)) + "\n")
        return
    if format != "csv":
        raise ValueError(f"unknown export format {format!r}")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in log.records:
            state = np.zeros(12)
            state[:min(12, r.state.size)] = r.state[:12]
            if r.state.size == 6:        # double integrator: p, v only
                state[:6] = r.state
            du = np.zeros(4)
            du[:min(4, r.du.size)] = r.du[:4]
            row = [r.t, r.agent, *state, *du, r.admm_iters, r.eps_pri, r.ms]
            writer.writerow([x if isinstance(x, int) else repr(float(x))
                             for x in row])


def load_log(path) -> TrajectoryLog:
    return log_from_dict(json.loads(Path(path).read_text()))


# -- metrics -----------------------------------------------------------------

@dataclass
class Metrics:
    min_distance_per_step: np.ndarray | None
    min_distance: float | None
    tracking_rmse: np.ndarray
    input_violations: int
    unconverged_steps: int
    admm_iters_total: int
    admm_iters_p50: float
    admm_iters_p90: float
    admm_iters_max: int
    wall_ms_total: float

    def to_dict(self) -> dict:
        return {
            "min_distance_m": self.min_distance,
            "tracking_rmse_m": list(self.tracking_rmse),
            "input_violations": self.input_violations,
            "unconverged_steps": self.unconverged_steps,
            "admm_iters_total": self.admm_iters_total,
            "admm_iters_p50": self.admm_iters_p50,
            "admm_iters_p90": self.admm_iters_p90,
            "admm_iters_max": self.admm_iters_max,
            "wall_ms_total": self.wall_ms_total,
        }


def compute_metrics(log: TrajectoryLog) -> Metrics:
    """Distance, tracking, bound-violation and iteration statistics."""
    if not log.records:
        raise ValueError("log is empty")
    scenario = scenario_from_dict(log.scenario)
    steps = log.by_step()
    N = scenario.N

    if N >= 2:
        per_step = []
        for recs in steps:
            pos = np.array([r.state[:3] for r in recs])
            dmin = min(np.linalg.norm(pos[i] - pos[j])
                       for i in range(N) for j in range(i + 1, N))
            per_step.append(dmin)
        min_per_step = np.array(per_step)
        min_overall = float(min_per_step.min())
    else:
        min_per_step, min_overall = None, None

    sq_err = np.zeros(N)
    counts = np.zeros(N)
    violations = 0
    lo, hi = scenario.input_lo, scenario.input_hi
    for r in log.records:
        ref = reference_position(scenario, r.agent, r.t + 1)
        sq_err[r.agent] += float(np.sum((r.state[:3] - ref) ** 2))
        counts[r.agent] += 1
        violations += int(np.any(r.du < lo - 1e-9) or np.any(r.du > hi + 1e-9))
    rmse = np.sqrt(sq_err / np.maximum(counts, 1))

    iters = np.array([recs[0].admm_iters for recs in steps])
    eps = np.array([recs[0].eps_pri for recs in steps])
    wall = sum(recs[0].ms for recs in steps)
    return Metrics(
        min_distance_per_step=min_per_step,
        min_distance=min_overall,
        tracking_rmse=rmse,
        input_violations=violations,
        unconverged_steps=int(np.sum(eps > scenario.eps_stop)),
        admm_iters_total=int(iters.sum()),
        admm_iters_p50=float(np.percentile(iters, 50)),
        admm_iters_p90=float(np.percentile(iters, 90)),
        admm_iters_max=int(iters.max()),
        wall_ms_total=float(wall),
    )
