"""Health-aware task allocation as one convex QP.

Decision vector, in order:

    u      (2N)   robot velocity commands
    alpha  (N*M)  relaxed robot-task assignment
    delta  (N*M)  progress-barrier slack
    t      (N*M)  churn epigraph, only when a previous assignment is penalized

The objective is

    sum_i |u_i|^2 + sum_{i,m} (w_im - value) alpha_im + sum_{i,m} c_i delta_im
        + churn_weight * sum_{i,m} t_im

Each capable robot-task pair gets a barrier row
`-2 (x_i - goal_m)^T u_i >= kappa |x_i - goal_m|^2 alpha_im - rho delta_im`,
so an assigned robot is pushed toward its goal unless it pays slack. Health
enters through the weights (Suspect and Fault penalties, costlier slack) and
through hard masks that zero the assignment cap of faulted robots.

Between reallocations the same builder runs with `pinned_alpha`, which turns
the assignment into a parameter and leaves only the motion problem in
`(u, delta)`.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from taskwarden.detector import HealthLabel
from taskwarden.exceptions import (
    AllocationError,
    AllocationInfeasibleError,
    ConfigError,
)
from taskwarden.qp_core import QpProblem, QpSettings, QpSolution, QpStatus, solve_qp

__all__ = [
    "AllocationProblem",
    "AllocationSolution",
    "HealthPolicy",
    "TeamSpec",
    "build_allocation_qp",
    "extract_assignment",
    "health_mask",
    "health_weights",
    "nominal_base_weights",
    "should_reallocate",
    "solve_allocation",
]

logger = logging.getLogger(__name__)

ASSIGNMENT_THRESHOLD = 0.5
_DEGRADED = frozenset({HealthLabel.SUSPECT, HealthLabel.UNINFORMATIVE})


@dataclass(frozen=True, eq=False)
class TeamSpec:
    """Static description of the team and the allocation cost terms.

    `specialization[i, m] > 0` means robot i can perform task m; the value
    also caps `alpha[i, m]`. `task_value` is the reward per unit of
    assignment, so covering a task pays off against its motion cost.
    """

    specialization: np.ndarray
    base_weights: np.ndarray
    base_slack_cost: np.ndarray
    kappa: float = 5.0
    rho: float = 1.0
    delta_max: float = 5.0
    task_value: float = 50.0
    u_max: float = 0.08

    def __post_init__(self) -> None:
        """Check shapes, ranges and task coverage."""
        S = np.atleast_2d(np.asarray(self.specialization, dtype=float))
        n_robots, _ = S.shape
        w0 = np.asarray(self.base_weights, dtype=float)
        c0 = np.broadcast_to(
            np.asarray(self.base_slack_cost, dtype=float),
            (n_robots,),
        ).copy()
        if w0.shape != S.shape:
            msg = f"base_weights has shape {w0.shape}, expected {S.shape}."
            raise ConfigError(msg)
        if np.any(S < 0) or np.any(S > 1):
            msg = "specialization entries must lie in [0, 1]."
            raise ConfigError(msg)
        uncovered = np.flatnonzero(~(S > 0).any(axis=0))
        if uncovered.size:
            msg = f"tasks {uncovered.tolist()} have no capable robot."
            raise ConfigError(msg)
        if np.any(c0 <= 0):
            msg = "base slack costs must be positive."
            raise ConfigError(msg)
        for name in ("kappa", "rho", "delta_max", "u_max"):
            if getattr(self, name) <= 0:
                msg = f"{name} must be positive, got {getattr(self, name)}."
                raise ConfigError(msg)
        object.__setattr__(self, "specialization", S)
        object.__setattr__(self, "base_weights", w0)
        object.__setattr__(self, "base_slack_cost", c0)

    @property
    def n_robots(self) -> int:
        return self.specialization.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.specialization.shape[1]


@dataclass(frozen=True)
class HealthPolicy:
    """How health labels change the allocation and when it is re-solved.

    `gated_tasks=None` applies hard masks on every task; an empty tuple
    leaves health to the weights alone.
    """

    kappa_s: float = 2.0
    fault_penalty: float = 1000.0
    rho_s: float = 1.0
    churn_weight: float = 0.5
    cooldown_steps: int = 5
    periodic_resolve_every: int = 10
    gated_tasks: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        """Validate penalties and schedules."""
        if self.kappa_s < 0 or self.rho_s < 0 or self.churn_weight < 0:
            msg = "kappa_s, rho_s and churn_weight must be non-negative."
            raise ConfigError(msg)
        if self.fault_penalty <= self.kappa_s:
            msg = "fault_penalty must exceed kappa_s."
            raise ConfigError(msg)
        if self.cooldown_steps < 0 or self.periodic_resolve_every < 1:
            msg = "cooldown_steps >= 0 and periodic_resolve_every >= 1 required."
            raise ConfigError(msg)
        if self.gated_tasks is not None:
            object.__setattr__(self, "gated_tasks", tuple(self.gated_tasks))


@dataclass(frozen=True, eq=False)
class AllocationProblem:
    """An allocation QP plus the layout needed to read its solution."""

    qp: QpProblem
    n_robots: int
    n_tasks: int
    delta_max: float
    prev_alpha: np.ndarray | None
    pinned_alpha: np.ndarray | None
    u_slice: slice
    alpha_slice: slice | None
    delta_slice: slice
    t_slice: slice | None

    @property
    def pinned(self) -> bool:
        return self.pinned_alpha is not None

    def pack(self, u, alpha, delta) -> np.ndarray:
        """Lay out a candidate point in this problem's decision vector."""
        x = np.zeros(self.qp.n)
        x[self.u_slice] = np.asarray(u, dtype=float).reshape(-1)
        x[self.delta_slice] = np.asarray(delta, dtype=float).reshape(-1)
        if self.alpha_slice is not None:
            x[self.alpha_slice] = np.asarray(alpha, dtype=float).reshape(-1)
        if self.t_slice is not None:
            diff = np.asarray(alpha, dtype=float) - self.prev_alpha
            x[self.t_slice] = np.abs(diff).reshape(-1)
        return x


@dataclass(frozen=True, eq=False)
class AllocationSolution:
    u: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    churn: float
    objective: float
    solver_stats: QpSolution
    assignment: tuple[int | None, ...] = field(default=())

    @property
    def slack(self) -> float:
        return float(self.delta.sum())


def nominal_base_weights(starts, goals, scale: float = 1.0) -> np.ndarray:
    """Base weights proportional to robot-task distance, normalized to [0, scale]."""
    starts = np.asarray(starts, dtype=float)
    goals = np.asarray(goals, dtype=float)
    dist = np.linalg.norm(starts[:, None, :] - goals[None, :, :], axis=-1)
    peak = dist.max()
    return scale * dist / peak if peak > 0 else np.zeros_like(dist)


def health_weights(
    spec: TeamSpec,
    policy: HealthPolicy,
    health: Sequence[HealthLabel],
) -> tuple[np.ndarray, np.ndarray]:
    """Assignment weights and slack costs adjusted for health.

    Uninformative robots are weighted like Suspect ones.
    """
    degraded = np.array([label in _DEGRADED for label in health], dtype=float)
    faulted = np.array([label is HealthLabel.FAULT for label in health], dtype=float)
    if degraded.size != spec.n_robots:
        msg = f"got {degraded.size} health labels for {spec.n_robots} robots."
        raise ConfigError(msg)
    penalty = policy.kappa_s * degraded + policy.fault_penalty * faulted
    w = spec.base_weights + penalty[:, None]
    c = spec.base_slack_cost * (1.0 + policy.rho_s * degraded)
    return w, c


def health_mask(
    spec: TeamSpec,
    health: Sequence[HealthLabel],
    gated_tasks: Sequence[int] | None = None,
) -> np.ndarray:
    """Per-robot mask: 0 for faulted robots, 1 otherwise.

    With no gated tasks nothing is masked.
    """
    if len(health) != spec.n_robots:
        msg = f"got {len(health)} health labels for {spec.n_robots} robots."
        raise ConfigError(msg)
    if gated_tasks is not None and len(gated_tasks) == 0:
        return np.ones(spec.n_robots)
    return np.array([0.0 if label is HealthLabel.FAULT else 1.0 for label in health])


def should_reallocate(
    step: int,
    health_changed: bool,  # noqa: FBT001
    last_solve_step: int | None,
    policy: HealthPolicy,
) -> bool:
    """Event-triggered re-solve with a cooldown, plus a periodic refresh."""
    if last_solve_step is None:
        return True
    elapsed = step - last_solve_step
    if health_changed and elapsed >= policy.cooldown_steps:
        return True
    return elapsed >= policy.periodic_resolve_every


def assignment_caps(
    spec: TeamSpec,
    g,
    *,
    gated_tasks: Sequence[int] | None = None,
    active_tasks=None,
) -> np.ndarray:
    """Upper bounds on alpha: specialization, masks and completed tasks."""
    cap = spec.specialization.copy()
    gated = np.zeros(spec.n_tasks, dtype=bool)
    gated_idx = range(spec.n_tasks) if gated_tasks is None else gated_tasks
    gated[list(gated_idx)] = True
    g = np.asarray(g, dtype=float)
    cap[:, gated] *= g[:, None]
    if active_tasks is not None:
        cap[:, ~np.asarray(active_tasks, dtype=bool)] = 0.0
    return cap


def _pair(i: int, m: int, n_tasks: int) -> int:
    return i * n_tasks + m


def build_allocation_qp(  # noqa: PLR0913
    spec: TeamSpec,
    positions,
    goals,
    w,
    c,
    g,
    prev_alpha=None,
    churn_weight: float = 0.0,
    u_max: float | None = None,
    *,
    gated_tasks: Sequence[int] | None = None,
    active_tasks=None,
    pinned_alpha=None,
) -> AllocationProblem:
    """Assemble the allocation QP for the current team state.

    Args:
        spec: team description.
        positions: (N, 2) robot positions.
        goals: (M, 2) task goals.
        w: (N, M) assignment weights from `health_weights`.
        c: (N,) slack costs from `health_weights`.
        g: (N,) health mask from `health_mask`.
        prev_alpha: previous assignment; enables the churn term.
        churn_weight: weight of the l1 churn penalty.
        u_max: speed box; defaults to `spec.u_max`.
        gated_tasks: tasks on which the mask applies (None = all).
        active_tasks: (M,) booleans, False for completed tasks.
        pinned_alpha: fixed assignment for a motion-only solve.

    Returns:
        The QP and its variable layout.

    """
    n, m = spec.n_robots, spec.n_tasks
    positions = np.asarray(positions, dtype=float).reshape(n, 2)
    goals = np.asarray(goals, dtype=float).reshape(m, 2)
    w = np.asarray(w, dtype=float).reshape(n, m)
    c = np.broadcast_to(np.asarray(c, dtype=float), (n,))
    u_max = spec.u_max if u_max is None else u_max
    active = (
        np.ones(m, dtype=bool)
        if active_tasks is None
        else np.asarray(active_tasks, bool)
    )
    cap = assignment_caps(spec, g, gated_tasks=gated_tasks, active_tasks=active)

    pinned = None
    if pinned_alpha is not None:
        pinned = np.minimum(np.asarray(pinned_alpha, dtype=float).reshape(n, m), cap)
    prev = None
    if prev_alpha is not None and pinned is None:
        prev = np.asarray(prev_alpha, dtype=float).reshape(n, m).copy()
        prev[:, ~active] = 0.0
    use_churn = prev is not None and churn_weight > 0

    nm = n * m
    u_slice = slice(0, 2 * n)
    offset = 2 * n
    alpha_slice = None
    if pinned is None:
        alpha_slice = slice(offset, offset + nm)
        offset += nm
    delta_slice = slice(offset, offset + nm)
    offset += nm
    t_slice = slice(offset, offset + nm) if use_churn else None
    size = offset + (nm if use_churn else 0)

    names = [f"u[{i}].{axis}" for i in range(n) for axis in "xy"]
    if alpha_slice is not None:
        names += [f"alpha[{i},{k}]" for i in range(n) for k in range(m)]
    names += [f"delta[{i},{k}]" for i in range(n) for k in range(m)]
    if t_slice is not None:
        names += [f"t[{i},{k}]" for i in range(n) for k in range(m)]

    P = np.zeros((size, size))
    P[u_slice, u_slice] = 2.0 * np.eye(2 * n)
    q = np.zeros(size)
    if alpha_slice is not None:
        q[alpha_slice] = (w - spec.task_value).reshape(-1)
    q[delta_slice] = np.repeat(c, m)
    if t_slice is not None:
        q[t_slice] = churn_weight

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    eq_rows: list[np.ndarray] = []
    eq_rhs: list[float] = []

    def row() -> np.ndarray:
        return np.zeros(size)

    # Progress barriers for capable pairs on open tasks. A pinned solve keeps
    # only the assigned pairs; the others leave the robot unconstrained.
    for i in range(n):
        for k in range(m):
            if spec.specialization[i, k] <= 0 or not active[k]:
                continue
            if pinned is not None and pinned[i, k] <= 0:
                continue
            offset_vec = positions[i] - goals[k]
            r = row()
            r[2 * i : 2 * i + 2] = 2.0 * offset_vec
            r[delta_slice.start + _pair(i, k, m)] = -spec.rho
            barrier = spec.kappa * float(offset_vec @ offset_vec)
            if alpha_slice is None:
                rows.append(r)
                rhs.append(-barrier * pinned[i, k])
            else:
                r[alpha_slice.start + _pair(i, k, m)] = barrier
                rows.append(r)
                rhs.append(0.0)

    if alpha_slice is not None:
        for i in range(n):
            for k in range(m):
                idx = alpha_slice.start + _pair(i, k, m)
                if cap[i, k] <= 0:
                    r = row()
                    r[idx] = 1.0
                    eq_rows.append(r)
                    eq_rhs.append(0.0)
                    continue
                lower, upper = row(), row()
                lower[idx], upper[idx] = -1.0, 1.0
                rows += [lower, upper]
                rhs += [0.0, float(cap[i, k])]
        for i in range(n):
            r = row()
            r[alpha_slice.start + i * m : alpha_slice.start + (i + 1) * m] = 1.0
            rows.append(r)
            rhs.append(1.0)
        for k in range(m):
            r = row()
            r[[alpha_slice.start + _pair(i, k, m) for i in range(n)]] = 1.0
            rows.append(r)
            rhs.append(1.0)

    for j in range(nm):
        lower, upper = row(), row()
        lower[delta_slice.start + j], upper[delta_slice.start + j] = -1.0, 1.0
        rows += [lower, upper]
        rhs += [0.0, spec.delta_max]

    if t_slice is not None:
        flat_prev = prev.reshape(-1)
        for j in range(nm):
            above, below = row(), row()
            above[alpha_slice.start + j], above[t_slice.start + j] = 1.0, -1.0
            below[alpha_slice.start + j], below[t_slice.start + j] = -1.0, -1.0
            rows += [above, below]
            rhs += [float(flat_prev[j]), -float(flat_prev[j])]

    for j in range(2 * n):
        lower, upper = row(), row()
        lower[j], upper[j] = -1.0, 1.0
        rows += [lower, upper]
        rhs += [u_max, u_max]

    qp = QpProblem(
        P=P,
        q=q,
        G=np.array(rows),
        h=np.array(rhs),
        A=np.array(eq_rows) if eq_rows else None,
        b=np.array(eq_rhs) if eq_rows else None,
        variable_names=tuple(names),
    )
    return AllocationProblem(
        qp=qp,
        n_robots=n,
        n_tasks=m,
        delta_max=spec.delta_max,
        prev_alpha=prev,
        pinned_alpha=pinned,
        u_slice=u_slice,
        alpha_slice=alpha_slice,
        delta_slice=delta_slice,
        t_slice=t_slice,
    )


def extract_assignment(alpha) -> tuple[int | None, ...]:
    """Robot-to-task map from a relaxed assignment.

    A robot holds the task with the largest alpha above 0.5; ties go to the
    lower task index. Robots with no such task are unassigned.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    out: list[int | None] = []
    for row in alpha:
        best = int(np.argmax(row)) if row.size else 0
        out.append(best if row.size and row[best] > ASSIGNMENT_THRESHOLD else None)
    return tuple(out)


def _warm_vector(problem: AllocationProblem, warm) -> np.ndarray | None:
    if warm is None:
        return None
    if isinstance(warm, AllocationSolution):
        shape = (problem.n_robots, problem.n_tasks)
        alpha = warm.alpha if warm.alpha.shape == shape else None
        if alpha is None:
            return None
        if problem.pinned:
            alpha = problem.pinned_alpha
        return problem.pack(warm.u, alpha, warm.delta)
    vector = np.asarray(warm, dtype=float).reshape(-1)
    return vector if vector.size == problem.qp.n else None


def solve_allocation(
    problem: AllocationProblem,
    warm=None,
    settings: QpSettings | None = None,
) -> AllocationSolution:
    """Solve the allocation QP and unpack commands and assignments.

    Args:
        problem: output of `build_allocation_qp`.
        warm: a previous `AllocationSolution` or a raw decision vector.
        settings: solver settings.

    Raises:
        AllocationInfeasibleError: if the solver reports infeasibility.
        AllocationError: if the solver stops short of the KKT tolerance.

    """
    warm_x = _warm_vector(problem, warm)
    result = solve_qp(problem.qp, warm_x, settings)
    if warm_x is not None and not result.optimal:
        logger.debug("warm-started allocation solve failed; retrying cold")
        result = solve_qp(problem.qp, None, settings)
    if result.status is QpStatus.INFEASIBLE:
        msg = "allocation QP reported infeasible."
        raise AllocationInfeasibleError(msg)
    if not result.optimal:
        msg = (
            f"allocation QP stopped at {result.status} after {result.iterations} "
            f"iterations (KKT residual {result.kkt_residual:.2e})."
        )
        raise AllocationError(msg)

    n, m = problem.n_robots, problem.n_tasks
    x = result.x
    u = x[problem.u_slice].reshape(n, 2)
    if problem.alpha_slice is not None:
        alpha = np.clip(x[problem.alpha_slice].reshape(n, m), 0.0, 1.0)
    else:
        alpha = problem.pinned_alpha.copy()
    delta = np.clip(x[problem.delta_slice].reshape(n, m), 0.0, problem.delta_max)
    churn = 0.0
    if problem.prev_alpha is not None:
        churn = float(np.abs(alpha - problem.prev_alpha).sum())

    return AllocationSolution(
        u=u,
        alpha=alpha,
        delta=delta,
        churn=churn,
        objective=result.objective,
        solver_stats=result,
        assignment=extract_assignment(alpha),
    )
