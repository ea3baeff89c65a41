"""Typed scenario configuration.

A scenario bundles the team layout, allocation costs, estimator and
detector settings and the fault schedule of one simulated run. Instances
are immutable and serialize to plain dicts that mirror the TOML layout
read by `taskwarden.conf`.
"""

from dataclasses import asdict, dataclass, field, fields, replace
from enum import StrEnum
from typing import Any

import numpy as np

from taskwarden.allocator import HealthPolicy, TeamSpec, nominal_base_weights
from taskwarden.detector import DetectorConfig, NaiveConfig
from taskwarden.estimator import DEFAULT_L_MIN, KfVariant
from taskwarden.exceptions import ConfigError

__all__ = [
    "BiasProfile",
    "DetectorMode",
    "EstimatorConfig",
    "FaultKind",
    "FaultSpec",
    "ScenarioConfig",
    "TeamConfig",
]


class FaultKind(StrEnum):
    NOISE_INCREASE = "noise_increase"
    VELOCITY_SLIP_BIAS = "velocity_slip_bias"
    COMM_DROPOUT = "comm_dropout"
    TASK_ABANDONMENT = "task_abandonment"


class BiasProfile(StrEnum):
    """Shape of a velocity-slip bias on measured progress.

    `ramp` grows by `magnitude` every step since onset; `offset` is a
    constant error of `magnitude`.
    """

    RAMP = "ramp"
    OFFSET = "offset"


class DetectorMode(StrEnum):
    """Which health source drives the allocator.

    `progress` is the filter-based detector, `none` keeps every robot
    healthy, `naive` uses fixed progress/rate thresholds and `oracle` reads
    labels straight from the fault schedule.
    """

    PROGRESS = "progress"
    NONE = "none"
    NAIVE = "naive"
    ORACLE = "oracle"


def _as_matrix(
    value,
    name: str,
    cols: int | None = None,
) -> tuple[tuple[float, ...], ...]:
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        msg = f"{name} must be a numeric matrix."
        raise ConfigError(msg) from exc
    shape = array.shape
    if len(shape) != 2 or (cols is not None and shape[1] != cols):  # noqa: PLR2004
        msg = f"{name} must be a matrix with {cols or 'k'} columns, got {array.shape}."
        raise ConfigError(msg)
    return tuple(tuple(float(v) for v in row) for row in array)


@dataclass(frozen=True)
class FaultSpec:
    """One injected fault.

    `end_step` is exclusive; None keeps the fault active to the end of the
    run. `magnitude` is the noise standard deviation [m] for noise
    increases and the bias per step [progress] for slip biases.
    """

    kind: FaultKind
    robot: int
    start_step: int
    end_step: int | None = None
    magnitude: float = 0.0
    start_jitter: int = 0
    profile: BiasProfile = BiasProfile.RAMP

    def __post_init__(self) -> None:
        """Coerce enums and check the schedule."""
        try:
            object.__setattr__(self, "kind", FaultKind(self.kind))
            object.__setattr__(self, "profile", BiasProfile(self.profile))
        except ValueError as exc:
            msg = f"unknown fault kind or profile: {exc}"
            raise ConfigError(msg) from exc
        if self.robot < 0 or self.start_step < 0 or self.start_jitter < 0:
            msg = "fault robot, start_step and start_jitter must be non-negative."
            raise ConfigError(msg)
        if self.end_step is not None and self.end_step <= self.start_step:
            msg = (
                f"fault end_step {self.end_step} must exceed "
                f"start_step {self.start_step}."
            )
            raise ConfigError(msg)
        if self.magnitude < 0:
            msg = f"fault magnitude must be non-negative, got {self.magnitude}."
            raise ConfigError(msg)
        if self.kind is FaultKind.NOISE_INCREASE and self.magnitude <= 0:
            msg = "noise_increase needs a positive magnitude (noise std in metres)."
            raise ConfigError(msg)

    def active(self, step: int, start_step: int | None = None) -> bool:
        """Whether the fault acts at `step`, given its effective start."""
        start = self.start_step if start_step is None else start_step
        if self.end_step is None:
            return step >= start
        return start <= step < start + (self.end_step - self.start_step)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["kind"] = str(self.kind)
        data["profile"] = str(self.profile)
        if self.end_step is None:
            data.pop("end_step")
        return data


@dataclass(frozen=True)
class EstimatorConfig:
    """Progress-filter settings.

    `q_scale` multiplies `q0_base`; `calibrate` suggests a value for it.
    """

    variant: KfVariant = KfVariant.CV
    q0_base: tuple[tuple[float, ...], ...] = ((1e-6, 0.0), (0.0, 5e-5))
    p0: tuple[tuple[float, ...], ...] = ((1e-4, 0.0), (0.0, 1e-4))
    l_min: float = DEFAULT_L_MIN
    adaptive_q: bool = True
    q_scale: float = 1.0

    def __post_init__(self) -> None:
        """Coerce matrices and check ranges."""
        try:
            object.__setattr__(self, "variant", KfVariant(self.variant))
        except ValueError as exc:
            msg = f"unknown estimator variant {self.variant!r}."
            raise ConfigError(msg) from exc
        object.__setattr__(self, "q0_base", _as_matrix(self.q0_base, "q0_base", 2))
        object.__setattr__(self, "p0", _as_matrix(self.p0, "p0", 2))
        if self.l_min <= 0 or self.q_scale <= 0:
            msg = "l_min and q_scale must be positive."
            raise ConfigError(msg)

    @property
    def q0_matrix(self) -> np.ndarray:
        return self.q_scale * np.array(self.q0_base)

    @property
    def p0_matrix(self) -> np.ndarray:
        return np.array(self.p0)


@dataclass(frozen=True)
class TeamConfig:
    """Robot and task layout plus the allocation cost terms.

    Without explicit `base_weights`, weights grow with the start-to-goal
    distance, scaled to `base_weight_scale`.
    """

    robot_starts: tuple[tuple[float, ...], ...]
    task_goals: tuple[tuple[float, ...], ...]
    specialization: tuple[tuple[float, ...], ...]
    base_weights: tuple[tuple[float, ...], ...] | None = None
    base_weight_scale: float = 1.0
    slack_cost: float = 5.0
    kappa: float = 5.0
    rho: float = 1.0
    delta_max: float = 5.0
    task_value: float = 50.0
    u_max: float = 0.08

    def __post_init__(self) -> None:
        """Coerce matrices and check the workspace bounds."""
        starts = _as_matrix(self.robot_starts, "robot_starts", 2)
        goals = _as_matrix(self.task_goals, "task_goals", 2)
        spec = _as_matrix(self.specialization, "specialization", len(goals))
        if len(spec) != len(starts):
            msg = f"specialization has {len(spec)} rows for {len(starts)} robots."
            raise ConfigError(msg)
        for name, points in (("robot_starts", starts), ("task_goals", goals)):
            if np.any(np.asarray(points) < 0) or np.any(np.asarray(points) > 1):
                msg = f"{name} must lie inside the unit square."
                raise ConfigError(msg)
        object.__setattr__(self, "robot_starts", starts)
        object.__setattr__(self, "task_goals", goals)
        object.__setattr__(self, "specialization", spec)
        if self.base_weights is not None:
            weights = _as_matrix(self.base_weights, "base_weights", len(goals))
            object.__setattr__(self, "base_weights", weights)
        self.team_spec()

    @property
    def n_robots(self) -> int:
        return len(self.robot_starts)

    @property
    def n_tasks(self) -> int:
        return len(self.task_goals)

    def team_spec(self) -> TeamSpec:
        """The allocator's view of this team."""
        if self.base_weights is None:
            w0 = nominal_base_weights(
                self.robot_starts,
                self.task_goals,
                self.base_weight_scale,
            )
        else:
            w0 = np.array(self.base_weights)
        return TeamSpec(
            specialization=np.array(self.specialization),
            base_weights=w0,
            base_slack_cost=np.full(self.n_robots, self.slack_cost),
            kappa=self.kappa,
            rho=self.rho,
            delta_max=self.delta_max,
            task_value=self.task_value,
            u_max=self.u_max,
        )


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one simulated run needs, including its seed."""

    team: TeamConfig
    name: str = "scenario"
    dt: float = 0.1
    steps: int = 200
    seed: int = 0
    sigma_xy: float = 0.007
    completion_radius: float = 0.02
    detector_mode: DetectorMode = DetectorMode.PROGRESS
    policy: HealthPolicy = field(default_factory=HealthPolicy)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    naive: NaiveConfig = field(default_factory=NaiveConfig)
    faults: tuple[FaultSpec, ...] = ()

    def __post_init__(self) -> None:
        """Check cross-section consistency."""
        try:
            object.__setattr__(self, "detector_mode", DetectorMode(self.detector_mode))
        except ValueError as exc:
            msg = f"unknown detector_mode {self.detector_mode!r}."
            raise ConfigError(msg) from exc
        object.__setattr__(self, "faults", tuple(self.faults))
        if self.dt <= 0 or self.steps < 1:
            msg = "dt must be positive and steps at least 1."
            raise ConfigError(msg)
        if self.sigma_xy < 0 or self.completion_radius <= 0:
            msg = "sigma_xy must be non-negative and completion_radius positive."
            raise ConfigError(msg)
        for fault in self.faults:
            if fault.robot >= self.team.n_robots:
                n = self.team.n_robots
                msg = f"fault targets robot {fault.robot}, team has {n}."
                raise ConfigError(msg)
        gated = self.policy.gated_tasks or ()
        if any(not 0 <= k < self.team.n_tasks for k in gated):
            msg = f"gated_tasks {list(gated)} outside 0..{self.team.n_tasks - 1}."
            raise ConfigError(msg)
        if self.policy.fault_penalty <= self.team.task_value:
            msg = "policy.fault_penalty must exceed team.task_value."
            raise ConfigError(msg)

    @property
    def n_robots(self) -> int:
        return self.team.n_robots

    @property
    def n_tasks(self) -> int:
        return self.team.n_tasks

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with top-level fields replaced."""
        return replace(self, **changes)

    def with_fault_magnitude(
        self,
        kind: FaultKind,
        magnitude: float,
    ) -> "ScenarioConfig":
        """Copy where every fault of `kind` has the given magnitude."""
        faults = tuple(
            replace(f, magnitude=magnitude) if f.kind is kind else f
            for f in self.faults
        )
        return replace(self, faults=faults)

    def to_dict(self) -> dict[str, Any]:
        """Plain nested dict in the TOML layout."""
        team = asdict(self.team)
        if team["base_weights"] is None:
            team.pop("base_weights")
        team = {k: _listify(v) for k, v in team.items()}
        policy = asdict(self.policy)
        if policy["gated_tasks"] is None:
            policy.pop("gated_tasks")
        else:
            policy["gated_tasks"] = list(policy["gated_tasks"])
        estimator = {k: _listify(v) for k, v in asdict(self.estimator).items()}
        estimator["variant"] = str(self.estimator.variant)
        return {
            "scenario": {
                f.name: (str(v) if isinstance(v, StrEnum) else v)
                for f in fields(self)
                if isinstance(v := getattr(self, f.name), (str, int, float))
            },
            "team": team,
            "policy": policy,
            "estimator": estimator,
            "detector": asdict(self.detector),
            "naive": asdict(self.naive),
            "faults": [f.to_dict() for f in self.faults],
        }


def _listify(value):
    if isinstance(value, tuple):
        return [_listify(v) for v in value]
    return value
