"""Desk-scale multi-robot simulator with fault injection.

Robots are single integrators in the unit square. Every tick runs the same
loop:

1. measure progress on each assigned (robot, task) stream and run its filter;
2. update health labels (detector, baseline or oracle, per `detector_mode`);
3. re-solve the allocation QP on health events, task completions or the
   periodic schedule, otherwise solve the motion QP with the current
   assignment pinned;
4. apply actuation faults and integrate positions;
5. close finished tasks and log the step.

Randomness comes from named streams under the run seed, so equal configs
give equal logs.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from taskwarden.allocator import (
    AllocationSolution,
    build_allocation_qp,
    health_mask,
    health_weights,
    should_reallocate,
    solve_allocation,
)
from taskwarden.detector import (
    DetectorState,
    HealthLabel,
    NaiveState,
    detector_step,
    naive_step,
    nis,
)
from taskwarden.estimator import (
    KfModel,
    KfState,
    KfVariant,
    adapt_process_noise,
    kf_init,
    kf_predict,
    kf_update,
    scale_covariances,
)
from taskwarden.exceptions import AllocationError, ConfigError, SimulationError
from taskwarden.progress_signal import Progress, spatial_progress
from taskwarden.qp_core import dump_problem
from taskwarden.runlog import RunLog, StepRecord, summarize
from taskwarden.scenario import (
    BiasProfile,
    DetectorMode,
    FaultKind,
    FaultSpec,
    ScenarioConfig,
)
from taskwarden.utils import spawn_rng

__all__ = [
    "DROPPED",
    "DroppedOut",
    "World",
    "active_faults",
    "apply_actuation_faults",
    "create_world",
    "measure_progress",
    "run_scenario",
    "step_dynamics",
]

logger = logging.getLogger(__name__)


class DroppedOut:
    """Marker for a measurement lost to a communication dropout."""

    def __repr__(self) -> str:
        return "DROPPED"


DROPPED = DroppedOut()


@dataclass
class _Stream:
    """Filter and detector state of one (robot, task) pairing."""

    robot: int
    task: int
    start: np.ndarray
    goal: np.ndarray
    length: float
    model: KfModel
    kf: KfState
    detector: DetectorState
    naive: NaiveState = field(default_factory=NaiveState)
    nominal_rate: float = 0.0
    age: int = 0
    last_measurement: float | None = None
    adapt_sum: float = 0.0
    adapt_count: int = 0


@dataclass
class World:
    """Mutable simulation state."""

    config: ScenarioConfig
    positions: np.ndarray
    goals: np.ndarray
    starts: np.ndarray
    assignment: list[int | None]
    fault_starts: tuple[int, ...]
    rngs: dict[str, np.random.Generator]
    completed: dict[int, tuple[int, int]] = field(default_factory=dict)
    step: int = 0

    @property
    def active_tasks(self) -> np.ndarray:
        return np.array([k not in self.completed for k in range(len(self.goals))])


def create_world(config: ScenarioConfig) -> World:
    """Initial world: robots at their starts, fault onsets resolved."""
    fault_rng = spawn_rng(config.seed, "faults")
    fault_starts = tuple(
        int(f.start_step + fault_rng.integers(0, f.start_jitter + 1))
        for f in config.faults
    )
    rngs = {
        f"sensor/{i}": spawn_rng(config.seed, f"sensor/{i}")
        for i in range(config.n_robots)
    }
    positions = np.array(config.team.robot_starts, dtype=float)
    return World(
        config=config,
        positions=positions,
        goals=np.array(config.team.task_goals, dtype=float),
        starts=positions.copy(),
        assignment=[None] * config.n_robots,
        fault_starts=fault_starts,
        rngs=rngs,
    )


def active_faults(world: World, step: int) -> list[FaultSpec]:
    """Faults acting at `step`, using their jittered onsets."""
    return [
        fault
        for fault, start in zip(world.config.faults, world.fault_starts, strict=True)
        if fault.active(step, start)
    ]


def step_dynamics(world: World, controls) -> World:
    """Integrate one step: `x += dt * clip(u)`, then clamp to the unit square."""
    controls = np.asarray(controls, dtype=float)
    if controls.shape != world.positions.shape:
        msg = f"controls have shape {controls.shape}, expected {world.positions.shape}."
        raise SimulationError(msg)
    u_max = world.config.team.u_max
    velocity = np.clip(controls, -u_max, u_max)
    world.positions = np.clip(world.positions + world.config.dt * velocity, 0.0, 1.0)
    return world


def measure_progress(
    world: World,
    robot: int,
    task: int,
    faults,
) -> Progress | DroppedOut:
    """Noisy progress of `robot` on its assigned `task`.

    Position noise is Gaussian with std `sigma_xy`, or the magnitude of an
    active noise fault. Slip biases add to the measured progress. A
    communication dropout returns `DROPPED`.
    """
    if world.assignment[robot] != task:
        msg = f"robot {robot} is not assigned to task {task}."
        raise SimulationError(msg)
    mine = [f for f in faults if f.robot == robot]
    if any(f.kind is FaultKind.COMM_DROPOUT for f in mine):
        return DROPPED

    sigma = world.config.sigma_xy
    for fault in mine:
        if fault.kind is FaultKind.NOISE_INCREASE:
            sigma = max(sigma, fault.magnitude)
    noisy = world.positions[robot] + world.rngs[f"sensor/{robot}"].normal(0.0, sigma, 2)
    value = spatial_progress(noisy, world.starts[robot], world.goals[task]).value

    for fault in mine:
        if fault.kind is not FaultKind.VELOCITY_SLIP_BIAS:
            continue
        if fault.profile is BiasProfile.OFFSET:
            value += fault.magnitude
        else:
            onset = world.fault_starts[world.config.faults.index(fault)]
            value += fault.magnitude * (world.step - onset)
    return Progress(value)


def apply_actuation_faults(world: World, controls, faults) -> np.ndarray:
    """Zero the commands of robots that abandoned their task."""
    controls = np.array(controls, dtype=float)
    for fault in faults:
        if fault.kind is FaultKind.TASK_ABANDONMENT:
            controls[fault.robot] = 0.0
    return controls


def _nominal_rate(position, goal, command, length: float) -> float:
    """Progress rate a command would produce: (unit vector to goal . u) / length."""
    offset = np.asarray(goal) - np.asarray(position)
    distance = float(np.linalg.norm(offset))
    if distance == 0.0:
        return 0.0
    return float(offset @ np.asarray(command)) / (distance * length)


class _Runner:
    """One run of the tick loop; owns the world, streams and log."""

    def __init__(self, config: ScenarioConfig, dump_dir: Path | None) -> None:
        if config.sigma_xy <= 0:
            msg = "sigma_xy must be positive to run the progress filter (R = 0)."
            raise ConfigError(msg)
        self.config = config
        self.dump_dir = dump_dir
        self.world = create_world(config)
        self.spec = config.team.team_spec()
        self.streams: dict[int, _Stream] = {}
        self.labels = [HealthLabel.HEALTHY] * config.n_robots
        self.labels_at_solve = list(self.labels)
        self.alpha = np.zeros((config.n_robots, config.n_tasks))
        self.last_solve_step: int | None = None
        self.last_full: AllocationSolution | None = None
        self.tasks_changed = False
        self.log = RunLog(config=config, fault_starts=self.world.fault_starts)

    # ---- streams ---------------------------------------------------------

    def _open_stream(self, robot: int, task: int, command) -> None:
        cfg = self.config
        start = self.world.positions[robot].copy()
        goal = self.world.goals[task]
        length = float(np.linalg.norm(goal - start))
        self.world.starts[robot] = start
        est = cfg.estimator
        Q, R = scale_covariances(length, cfg.sigma_xy, est.q0_matrix, est.l_min)
        model = KfModel.for_variant(cfg.estimator.variant, cfg.dt, Q, R)
        rate = _nominal_rate(start, goal, command, length)
        inherited = self.labels[robot]
        if inherited is HealthLabel.UNINFORMATIVE:
            inherited = HealthLabel.HEALTHY
        self.streams[robot] = _Stream(
            robot=robot,
            task=task,
            start=start,
            goal=goal,
            length=length,
            model=model,
            kf=kf_init(0.0, rate, cfg.estimator.p0_matrix),
            detector=DetectorState.fresh(cfg.detector.window, inherited),
            nominal_rate=rate,
        )

    def _estimate(self, robot: int, stream: _Stream, faults) -> dict:
        """Predict, update and judge one stream; returns the record fields."""
        cfg = self.config
        measurement = measure_progress(self.world, robot, stream.task, faults)
        u = stream.nominal_rate if stream.model.variant is KfVariant.RT else None
        kf = kf_predict(stream.kf, stream.model, u)
        d = innovation = None
        y = None
        if measurement is not DROPPED:
            y = measurement.value
            kf, nu, S = kf_update(kf, stream.model, y)
            d = nis(nu, S)
            innovation = nu / math.sqrt(S)
        stream.kf = kf
        stream.age += 1

        if d is not None and cfg.estimator.adaptive_q:
            stream.adapt_sum += d
            stream.adapt_count += 1
            if stream.adapt_count == cfg.detector.window:
                mean_nis = stream.adapt_sum / stream.adapt_count
                Q = adapt_process_noise(stream.model.Q, mean_nis)
                stream.model = stream.model.with_noise(Q, stream.model.R)
                stream.adapt_sum, stream.adapt_count = 0.0, 0

        mode = cfg.detector_mode
        if mode is DetectorMode.PROGRESS:
            _, self.labels[robot], conf = detector_step(
                stream.detector,
                cfg.detector,
                d,
                kf.rate,
                kf.trace,
            )
        else:
            conf = 0.0
        if mode is DetectorMode.NAIVE:
            rate = None
            if y is not None and stream.last_measurement is not None:
                rate = (y - stream.last_measurement) / cfg.dt
            _, self.labels[robot] = naive_step(
                stream.naive,
                cfg.naive,
                rate,
                y,
                stream.age,
            )
        if y is not None:
            stream.last_measurement = y

        true_value = spatial_progress(
            self.world.positions[robot],
            stream.start,
            stream.goal,
            clip_eps=0.0,
        ).value
        return {
            "true_progress": true_value,
            "measured_progress": y,
            "dropped": measurement is DROPPED,
            "nis": d,
            "innovation": innovation,
            "windowed_nis": stream.detector.window_stat if d is not None else None,
            "trace_p": kf.trace,
            "stream_age": stream.age,
            "confidence": conf,
        }

    def _oracle_labels(self, faults) -> None:
        for robot in range(self.config.n_robots):
            mine = [f for f in faults if f.robot == robot]
            if self.labels[robot] is HealthLabel.FAULT or any(
                f.kind is not FaultKind.COMM_DROPOUT for f in mine
            ):
                self.labels[robot] = HealthLabel.FAULT
            elif mine:
                self.labels[robot] = HealthLabel.UNINFORMATIVE
            else:
                self.labels[robot] = HealthLabel.HEALTHY

    # ---- allocation -------------------------------------------------------

    def _allocate(self, step: int) -> tuple[AllocationSolution, bool, float | None]:
        cfg, policy = self.config, self.config.policy
        health_changed = self.labels != self.labels_at_solve or self.tasks_changed
        w, c = health_weights(self.spec, policy, self.labels)
        g = health_mask(self.spec, self.labels, policy.gated_tasks)
        common = {
            "u_max": cfg.team.u_max,
            "gated_tasks": policy.gated_tasks,
            "active_tasks": self.world.active_tasks,
        }

        full = should_reallocate(step, health_changed, self.last_solve_step, policy)
        if full:
            prev = None if self.last_solve_step is None else self.alpha
            problem = build_allocation_qp(
                self.spec,
                self.world.positions,
                self.world.goals,
                w,
                c,
                g,
                prev,
                policy.churn_weight,
                **common,
            )
            warm = self.last_full
        else:
            pinned = np.zeros_like(self.alpha)
            for robot, task in enumerate(self.world.assignment):
                if task is not None:
                    pinned[robot, task] = 1.0
            problem = build_allocation_qp(
                self.spec,
                self.world.positions,
                self.world.goals,
                w,
                c,
                g,
                **common,
                pinned_alpha=pinned,
            )
            warm = None

        try:
            solution = solve_allocation(problem, warm)
        except AllocationError as exc:
            where = ""
            if self.dump_dir is not None:
                target = Path(self.dump_dir) / f"qp_step{step:04d}.txt"
                path = dump_problem(problem.qp, target)
                where = f" Problem written to {path}."
            msg = f"step {step}: {exc}{where}"
            raise AllocationError(msg) from exc

        churn = None
        if full:
            if self.last_solve_step is not None:
                churn = solution.churn
            self.last_solve_step = step
            self.labels_at_solve = list(self.labels)
            self.tasks_changed = False
            self.last_full = solution
        self.alpha = solution.alpha
        return solution, full, churn

    def _reassign(self, solution: AllocationSolution, step: int) -> None:
        radius = self.config.completion_radius
        for robot, task in enumerate(solution.assignment):
            if task == self.world.assignment[robot]:
                continue
            self.streams.pop(robot, None)
            self.world.assignment[robot] = task
            if task is None:
                continue
            offset = self.world.goals[task] - self.world.positions[robot]
            if np.linalg.norm(offset) < radius:
                self.world.completed[task] = (step, robot)
                self.world.assignment[robot] = None
                self.tasks_changed = True
            else:
                self._open_stream(robot, task, solution.u[robot])
        for robot, stream in self.streams.items():
            stream.nominal_rate = _nominal_rate(
                self.world.positions[robot],
                stream.goal,
                solution.u[robot],
                stream.length,
            )

    def _complete_tasks(self, step: int) -> None:
        radius = self.config.completion_radius
        for robot, task in enumerate(self.world.assignment):
            if task is None:
                continue
            offset = self.world.positions[robot] - self.world.goals[task]
            if np.linalg.norm(offset) < radius:
                self.world.completed[task] = (step, robot)
                self.world.assignment[robot] = None
                self.streams.pop(robot, None)
                self.tasks_changed = True
                logger.debug("step %d: robot %d completed task %d", step, robot, task)

    # ---- loop ---------------------------------------------------------------

    def tick(self, step: int) -> StepRecord:
        cfg = self.config
        n = cfg.n_robots
        self.world.step = step
        faults = active_faults(self.world, step)

        started = time.perf_counter()
        fields_by_robot: dict[int, dict] = {}
        for robot in sorted(self.streams):
            fields_by_robot[robot] = self._estimate(robot, self.streams[robot], faults)
        if cfg.detector_mode is DetectorMode.ORACLE:
            self._oracle_labels(faults)
        detector_time = time.perf_counter() - started

        solution, full, churn = self._allocate(step)
        self._reassign(solution, step)
        controls = apply_actuation_faults(self.world, solution.u, faults)
        step_dynamics(self.world, controls)
        self._complete_tasks(step)

        def column(name, default=None):
            return tuple(
                fields_by_robot.get(i, {}).get(name, default) for i in range(n)
            )

        return StepRecord(
            step=step,
            positions=tuple((float(x), float(y)) for x, y in self.world.positions),
            assignment=tuple(self.world.assignment),
            true_progress=column("true_progress"),
            measured_progress=column("measured_progress"),
            dropped=column("dropped", False),  # noqa: FBT003
            nis=column("nis"),
            innovation=column("innovation"),
            windowed_nis=column("windowed_nis"),
            trace_p=column("trace_p"),
            stream_age=column("stream_age", 0),
            labels=tuple(self.labels),
            confidence=column("confidence", 0.0),
            alpha=tuple(tuple(float(a) for a in row) for row in self.alpha),
            reallocated=full,
            churn=churn,
            slack=solution.slack,
            qp_iterations=solution.solver_stats.iterations,
            detector_time=detector_time,
            qp_time=solution.solver_stats.solve_time,
        )

    def run(self) -> RunLog:
        for step in range(self.config.steps):
            self.log.records.append(self.tick(step))
        self.log.summary = summarize(self.log, self.world.completed)
        return self.log


def run_scenario(config: ScenarioConfig, *, dump_dir: Path | None = None) -> RunLog:
    """Simulate one scenario and return its log.

    Args:
        config: the scenario, seed included.
        dump_dir: where to write the offending QP if allocation fails.

    Raises:
        AllocationError: if an allocation QP cannot be solved.
        ConfigError: if the scenario cannot drive the filter (zero noise).

    """
    logger.info("running scenario %s (seed %d)", config.name, config.seed)
    return _Runner(config, dump_dir).run()
