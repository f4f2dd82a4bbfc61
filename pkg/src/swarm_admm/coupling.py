"""Second ADMM block: projection onto the big-M collision-avoidance set.

The consensus vector stacks (x_1, u_1, ..., x_N, u_N, c) where c holds six
binary indicators per agent pair and horizon step, one per signed axis
direction.  A zero indicator enforces the corresponding axis separation
of at least the safe distance; the sum of the six may be at most five, so
every pair keeps at least one enforced separation at every step.

The projection of gamma onto this set splits per (timestep, axis): binary
blocks are chosen combinatorially (threshold plus deterministic repairs),
then the enforced difference constraints define tiny least-squares
projections over the affected position scalars.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

AXES = 3
DIRS_PER_PAIR = 2 * AXES


class CouplingInfeasibleError(ValueError):
    """Enforced separations admit no continuous solution."""


class InitInfeasibleError(ValueError):
    """Some pair is closer than the safe distance along every axis."""

    def __init__(self, message, pattern=None, infeasible_cells=None):
        super().__init__(message)
        self.pattern = pattern
        self.infeasible_cells = infeasible_cells


class CapExceededError(RuntimeError):
    """Exhaustive enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class ConsensusLayout:
    """Index arithmetic for the stacked consensus vector.

    Agent blocks hold the nT state stacking followed by the mT input
    stacking; the binary block sits at the end, ordered pair-major, then
    timestep, then direction.  Positions are the first three coordinates
    of each state block.
    """

    N: int
    T: int
    n: int
    m: int

    def __post_init__(self):
        if self.N < 1 or self.T < 1 or self.n < AXES or self.m < 1:
            raise ValueError("layout requires N,T >= 1, n >= 3, m >= 1")

    @property
    def agent_dim(self) -> int:
        return (self.n + self.m) * self.T

    @property
    def n_pairs(self) -> int:
        return self.N * (self.N - 1) // 2

    @property
    def c_offset(self) -> int:
        return self.N * self.agent_dim

    @property
    def c_dim(self) -> int:
        return self.n_pairs * DIRS_PER_PAIR * self.T

    @property
    def total_dim(self) -> int:
        return self.c_offset + self.c_dim

    @property
    def pairs(self) -> tuple:
        return tuple((i, j) for i in range(self.N) for j in range(i + 1, self.N))

    def pair_index(self, i: int, j: int) -> int:
        if not 0 <= i < j < self.N:
            raise ValueError("pair indices must satisfy 0 <= i < j < N")
        return i * self.N - i * (i + 1) // 2 + (j - i - 1)

    def x_slice(self, agent: int):
        base = agent * self.agent_dim
        return slice(base, base + self.n * self.T)

    def u_slice(self, agent: int):
        base = agent * self.agent_dim + self.n * self.T
        return slice(base, base + self.m * self.T)

    def c_index(self, i: int, j: int, step: int, direction: int) -> int:
        return (self.c_offset
                + self.pair_index(i, j) * DIRS_PER_PAIR * self.T
                + step * DIRS_PER_PAIR + direction)

    def pos_index(self, agent: int, step: int, axis: int) -> int:
        return agent * self.agent_dim + step * self.n + axis

    def positions(self, vec: np.ndarray) -> np.ndarray:
        """(N, T, 3) array of the position coordinates inside vec."""
        out = np.empty((self.N, self.T, AXES))
        for a in range(self.N):
            out[a] = vec[self.x_slice(a)].reshape(self.T, self.n)[:, :AXES]
        return out

    def binaries(self, vec: np.ndarray) -> np.ndarray:
        """(n_pairs, T, 6) view-shaped copy of the binary block of vec."""
        return vec[self.c_offset:].reshape(self.n_pairs, self.T, DIRS_PER_PAIR).copy()


@dataclass(frozen=True)
class CouplingInstance:
    """One z-update: project gamma = y + lambda/sigma onto the big-M set."""

    gamma: np.ndarray
    layout: ConsensusLayout
    safe_distance: float
    big_m: float

    def __post_init__(self):
        if self.gamma.shape != (self.layout.total_dim,):
            raise ValueError(
                f"gamma has dimension {self.gamma.shape}, expected "
                f"({self.layout.total_dim},)")
        if self.safe_distance < 0:
            raise ValueError("safe distance must be nonnegative")
        if self.big_m <= self.safe_distance:
            raise ValueError("big-M constant must exceed the safe distance")


@dataclass(frozen=True)
class PairPattern:
    """Six binary indicators for one (pair, timestep) cell."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(DIRS_PER_PAIR)
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise ValueError("pattern entries must be exactly 0 or 1")
        object.__setattr__(self, "values", vals)

    def is_feasible(self, safe_distance: float) -> bool:
        if self.values.sum() > 5:
            return False
        if safe_distance > 0:
            for axis in range(AXES):
                if self.values[2 * axis] == 0 and self.values[2 * axis + 1] == 0:
                    return False
        return True


def eval_separations(positions: np.ndarray) -> np.ndarray:
    """Signed per-direction separations for every pair and timestep.

    positions is (N, T, 3); the result is (n_pairs, T, 6) with directions
    ordered (+x, -x, +y, -y, +z, -z) of the difference p_i - p_j, pairs in
    row-major i < j order.
    """
    positions = np.asarray(positions, dtype=float)
    N, T, _ = positions.shape
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    seps = np.empty((len(pairs), T, DIRS_PER_PAIR))
    for k, (i, j) in enumerate(pairs):
        diff = positions[i] - positions[j]
        seps[k, :, 0::2] = diff
        seps[k, :, 1::2] = -diff
    return seps


def init_binaries(positions: np.ndarray, safe_distance: float) -> np.ndarray:
    """Indicator initialization: 0 where a direction is separated by at
    least the safe distance, 1 otherwise.

    Raises InitInfeasibleError when some (pair, timestep) is closer than
    the safe distance in every direction (all six entries would be 1, which
    violates the at-most-five rule); the raw pattern and the offending cell
    mask ride along on the exception.
    """
    seps = eval_separations(positions)
    pattern = np.where(seps >= safe_distance, 0.0, 1.0)
    bad = pattern.sum(axis=2) > 5
    if bad.any():
        raise InitInfeasibleError(
            f"{int(bad.sum())} pair/timestep cells have no separated direction",
            pattern=pattern, infeasible_cells=bad)
    return pattern.ravel()


def init_binaries_with_fallback(positions: np.ndarray,
                                safe_distance: float) -> tuple[np.ndarray, bool]:
    """init_binaries, patching infeasible cells with the all-ones pattern
    minus the direction of maximum separation slack."""
    try:
        return init_binaries(positions, safe_distance), False
    except InitInfeasibleError as exc:
        pattern = exc.pattern
        seps = eval_separations(np.asarray(positions, dtype=float))
        for p, t in zip(*np.nonzero(exc.infeasible_cells)):
            cell = np.ones(DIRS_PER_PAIR)
            cell[int(np.argmax(seps[p, t]))] = 0.0
            pattern[p, t] = cell
        return pattern.ravel(), True


def assemble_coupling(y_next: np.ndarray, lam: np.ndarray, sigma: float,
                      safe_distance: float, big_m: float,
                      layout: ConsensusLayout) -> CouplingInstance:
    """Form the projection target gamma = y + lambda / sigma."""
    if sigma <= 0:
        raise ValueError("penalty parameter must be positive")
    gamma = np.asarray(y_next, dtype=float) + np.asarray(lam, dtype=float) / sigma
    return CouplingInstance(gamma, layout, safe_distance, big_m)


def _axis_edges(patterns: np.ndarray, pairs, step: int, axis: int):
    """Enforced difference constraints on one (timestep, axis).

    Returns (hi, lo) agent tuples meaning pos[hi] - pos[lo] >= d.
    Direction 2*axis enforces i above j, 2*axis+1 enforces j above i.
    """
    edges = []
    for k, (i, j) in enumerate(pairs):
        if patterns[k, step, 2 * axis] == 0.0:
            edges.append((i, j))
        if patterns[k, step, 2 * axis + 1] == 0.0:
            edges.append((j, i))
    return edges


def _has_cycle(edges, n_nodes: int) -> bool:
    # Kahn's algorithm; a directed cycle of >= d separations is infeasible.
    out = {}
    indeg = dict.fromkeys(range(n_nodes), 0)
    for hi, lo in edges:
        out.setdefault(hi, []).append(lo)
        indeg[lo] += 1
    queue = [v for v, dg in indeg.items() if dg == 0]
    seen = 0
    while queue:
        v = queue.pop()
        seen += 1
        for w in out.get(v, ()):
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return seen < n_nodes


def _project_axis(coords: np.ndarray, edges, safe_distance: float,
                  tol: float = 1e-10, max_sweeps: int = 200_000):
    """Project one axis' coordinates onto {z[hi] - z[lo] >= d for edges}.

    Disjoint constraints get the exact symmetric-split closed form; chains
    are handled by coordinate ascent on the constraint multipliers, with an
    outer active-set loop so untouched constraints cost nothing.  Returns
    (projected coords, squared distance moved).
    """
    if not edges:
        return coords.copy(), 0.0
    z = coords.copy()
    d = safe_distance

    touched = [a for e in edges for a in e]
    if len(set(touched)) == len(touched):
        for hi, lo in edges:
            bump = 0.5 * (d - (z[hi] - z[lo]))
            if bump > 0:
                z[hi] += bump
                z[lo] -= bump
        return z, float(np.sum((z - coords) ** 2))

    active = [e for e in edges if z[e[0]] - z[e[1]] < d]
    mu = dict.fromkeys(active, 0.0)
    while True:
        for _ in range(max_sweeps):
            biggest = 0.0
            for e in active:
                hi, lo = e
                delta = max(0.0, mu[e] - 0.5 * (z[hi] - z[lo] - d))
                change = delta - mu[e]
                if change != 0.0:
                    z[hi] += change
                    z[lo] -= change
                    mu[e] = delta
                biggest = max(biggest, abs(change))
            if biggest <= tol:
                break
        newly = [e for e in edges
                 if e not in mu and z[e[0]] - z[e[1]] < d - 1e-12]
        if not newly:
            break
        active = active + newly
        mu.update(dict.fromkeys(newly, 0.0))
    worst = min(z[hi] - z[lo] - d for hi, lo in edges)
    if worst < -1e-8:
        raise CouplingInfeasibleError(
            f"enforced separations violated by {-worst:.3e} after projection")
    return z, float(np.sum((z - coords) ** 2))


def _cell_pattern(gamma_cell: np.ndarray, sep_cell: np.ndarray,
                  d: float) -> np.ndarray:
    """Minimum-cost binary pattern for one (pair, timestep) cell.

    Axes decompose: each axis picks among unenforced (1,1) and the two
    single-direction enforcements, costed as the binary rounding error plus
    the pair-local symmetric-split projection cost of a violated enforced
    direction.  If every axis prefers (1,1), the at-most-five rule forces
    the axis with the smallest penalty to its best enforcing option.  Ties
    resolve toward the lower direction index.  Exact for an isolated pair;
    on multi-agent instances the projection cost is a local estimate.
    """
    cell = np.ones(DIRS_PER_PAIR)
    force_penalty, force_axis, force_option = np.inf, -1, None
    have_zero = False
    for axis in range(AXES):
        gp, gm = gamma_cell[2 * axis], gamma_cell[2 * axis + 1]
        sp, sm = sep_cell[2 * axis], sep_cell[2 * axis + 1]
        hp = 0.5 * (d - sp) ** 2 if sp < d else 0.0
        hm = 0.5 * (d - sm) ** 2 if sm < d else 0.0
        options = [((1.0 - gp) ** 2 + (1.0 - gm) ** 2, (1.0, 1.0)),
                   (gp ** 2 + (1.0 - gm) ** 2 + hp, (0.0, 1.0)),
                   ((1.0 - gp) ** 2 + gm ** 2 + hm, (1.0, 0.0))]
        if d == 0.0:
            options.append((gp ** 2 + gm ** 2 + 0.5 * sp ** 2, (0.0, 0.0)))
        best = min(options, key=lambda o: o[0])
        best_zero = min(options[1:], key=lambda o: o[0])
        cell[2 * axis:2 * axis + 2] = best[1]
        if 0.0 in best[1]:
            have_zero = True
        elif best_zero[0] - best[0] < force_penalty:
            force_penalty = best_zero[0] - best[0]
            force_axis, force_option = axis, best_zero[1]
    if not have_zero:
        cell[2 * force_axis:2 * force_axis + 2] = force_option
    return cell


def choose_patterns(instance: CouplingInstance) -> np.ndarray:
    """Binary pattern per (pair, timestep), shaped (n_pairs, T, 6).

    Each cell minimizes the binary rounding cost plus the pair-local
    projection cost of its enforced directions, subject to keeping at least
    one direction enforced; this recovers plain thresholding of the binary
    part of gamma whenever that is feasible with no enforced violation.
    Any directed cycle across three or more agents is then re-oriented to
    follow the coordinate order of gamma, which keeps the enforced set
    consistent.
    """
    lay = instance.layout
    d = instance.safe_distance
    gamma_c = lay.binaries(instance.gamma)
    positions = lay.positions(instance.gamma)
    seps = eval_separations(positions)
    pairs = lay.pairs

    patterns = np.empty_like(gamma_c)
    for p in range(lay.n_pairs):
        for t in range(lay.T):
            patterns[p, t] = _cell_pattern(gamma_c[p, t], seps[p, t], d)

    if d > 0:
        for t in range(lay.T):
            for axis in range(AXES):
                edges = _axis_edges(patterns, pairs, t, axis)
                if len(edges) >= 3 and _has_cycle(edges, lay.N):
                    for k, (i, j) in enumerate(pairs):
                        sub = patterns[k, t, 2 * axis:2 * axis + 2]
                        if sub.sum() == 1.0:
                            above = (positions[i, t, axis] >= positions[j, t, axis])
                            patterns[k, t, 2 * axis] = 0.0 if above else 1.0
                            patterns[k, t, 2 * axis + 1] = 1.0 if above else 0.0
    return patterns


def project_continuous(instance: CouplingInstance,
                       patterns: np.ndarray) -> np.ndarray:
    """Project gamma's continuous part onto the separations enforced by
    the given patterns; untouched coordinates are copied from gamma.

    Raises CouplingInfeasibleError when the enforced constraints are
    mutually inconsistent (a directed cycle with positive safe distance).
    """
    lay = instance.layout
    z = instance.gamma.copy()
    z[lay.c_offset:] = np.asarray(patterns, dtype=float).ravel()
    positions = lay.positions(instance.gamma)
    pairs = lay.pairs
    for t in range(lay.T):
        for axis in range(AXES):
            edges = _axis_edges(patterns, pairs, t, axis)
            if not edges:
                continue
            if instance.safe_distance > 0 and _has_cycle(edges, lay.N):
                raise CouplingInfeasibleError(
                    f"directed separation cycle at step {t}, axis {axis}")
            coords, _ = _project_axis(positions[:, t, axis], edges,
                                      instance.safe_distance)
            for a in range(lay.N):
                if coords[a] != positions[a, t, axis]:
                    z[lay.pos_index(a, t, axis)] = coords[a]
    return z


def _feasible_cell_patterns(safe_distance: float):
    cells = []
    for bits in itertools.product((0.0, 1.0), repeat=DIRS_PER_PAIR):
        cell = np.array(bits)
        if cell.sum() > 5:
            continue
        if safe_distance > 0 and any(
                cell[2 * a] == 0.0 and cell[2 * a + 1] == 0.0 for a in range(AXES)):
            continue
        cells.append(cell)
    return cells


def _exhaustive_timestep(instance: CouplingInstance, step: int, cells):
    """Global minimum over pattern combinations at one timestep."""
    lay = instance.layout
    d = instance.safe_distance
    pairs = lay.pairs
    positions = lay.positions(instance.gamma)
    gamma_c = lay.binaries(instance.gamma)

    binary_cost = [
        [float(np.sum((cell - gamma_c[p, step]) ** 2)) for cell in cells]
        for p in range(lay.n_pairs)
    ]
    axis_memo: dict = {}

    def axis_solution(axis, combo):
        # per-pair axis substate: (c+, c-)
        key = (axis, tuple((cells[ci][2 * axis], cells[ci][2 * axis + 1])
                           for ci in combo))
        if key not in axis_memo:
            pat = np.stack([cells[ci] for ci in combo])[:, None, :]
            edges = _axis_edges(pat, pairs, 0, axis)
            coords = positions[:, step, axis]
            if d > 0 and edges and _has_cycle(edges, lay.N):
                axis_memo[key] = None
            else:
                try:
                    axis_memo[key] = _project_axis(coords, edges, d)
                except CouplingInfeasibleError:
                    axis_memo[key] = None
        return axis_memo[key]

    best = None
    for combo in itertools.product(range(len(cells)), repeat=lay.n_pairs):
        cost = sum(binary_cost[p][combo[p]] for p in range(lay.n_pairs))
        if best is not None and cost >= best[0]:
            continue
        solutions = []
        for axis in range(AXES):
            sol = axis_solution(axis, combo)
            if sol is None:
                cost = None
                break
            solutions.append(sol[0])
            cost += sol[1]
        if cost is None:
            continue
        if best is None or cost < best[0]:
            best = (cost, combo, solutions)
    if best is None:
        raise CouplingInfeasibleError(f"no feasible pattern combination at step {step}")
    return best


def solve_coupling(instance: CouplingInstance, mode: str = "heuristic",
                   cap: int = 10 ** 6) -> np.ndarray:
    """Solve the z-update: projection of gamma with binary indicators.

    heuristic: choose_patterns followed by the continuous projection.
    exhaustive: per-timestep global enumeration of feasible pattern
    combinations (constraints never couple timesteps), bounded by cap.
    """
    lay = instance.layout
    if lay.N == 1:
        return instance.gamma.copy()
    if mode == "heuristic":
        return project_continuous(instance, choose_patterns(instance))
    if mode != "exhaustive":
        raise ValueError(f"unknown coupling mode {mode!r}")

    cells = _feasible_cell_patterns(instance.safe_distance)
    if len(cells) ** lay.n_pairs > cap:
        raise CapExceededError(
            f"{len(cells)}^{lay.n_pairs} pattern combinations exceed cap {cap}")
    z = instance.gamma.copy()
    for t in range(lay.T):
        _, combo, coords = _exhaustive_timestep(instance, t, cells)
        for p in range(lay.n_pairs):
            base = lay.c_offset + p * DIRS_PER_PAIR * lay.T + t * DIRS_PER_PAIR
            z[base:base + DIRS_PER_PAIR] = cells[combo[p]]
        for axis in range(AXES):
            for a in range(lay.N):
                z[lay.pos_index(a, t, axis)] = coords[axis][a]
    return z
