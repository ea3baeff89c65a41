"""Per-step run records and the per-run summary.

Records hold plain tuples so two logs compare with `==`. Wall-clock timings
are stored but excluded from comparisons, which keeps equal seeds equal.
"""

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from taskwarden.detector import HealthLabel
from taskwarden.scenario import ScenarioConfig

__all__ = [
    "RobotSummary",
    "RunLog",
    "RunSummary",
    "StepRecord",
    "TaskSummary",
    "healthy_nis_samples",
    "summarize",
]


@dataclass(frozen=True)
class StepRecord:
    """Everything observed and decided at one simulation step.

    Per-robot tuples are indexed by robot. `None` marks a robot without an
    active stream, or a dropped measurement. `stream_age` counts filter
    steps in the robot's current stream, this one included.
    """

    step: int
    positions: tuple[tuple[float, float], ...]
    assignment: tuple[int | None, ...]
    true_progress: tuple[float | None, ...]
    measured_progress: tuple[float | None, ...]
    dropped: tuple[bool, ...]
    nis: tuple[float | None, ...]
    innovation: tuple[float | None, ...]
    windowed_nis: tuple[float | None, ...]
    trace_p: tuple[float | None, ...]
    stream_age: tuple[int, ...]
    labels: tuple[HealthLabel, ...]
    confidence: tuple[float, ...]
    alpha: tuple[tuple[float, ...], ...]
    reallocated: bool
    churn: float | None
    slack: float
    qp_iterations: int
    detector_time: float = field(default=0.0, compare=False)
    qp_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["labels"] = [str(label) for label in self.labels]
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StepRecord":
        def tup(value):
            return tuple(tup(v) for v in value) if isinstance(value, list) else value

        kwargs = {key: tup(value) for key, value in data.items()}
        kwargs["labels"] = tuple(HealthLabel(label) for label in data["labels"])
        kwargs["positions"] = tuple(tuple(p) for p in data["positions"])
        return cls(**kwargs)


@dataclass(frozen=True)
class RobotSummary:
    robot: int
    faulty: bool
    task_before: int | None
    task_after: int | None
    fault_init_step: int | None
    fault_det_step: int | None
    completed: bool
    nis_mean: float | None
    nis_std: float | None


@dataclass(frozen=True)
class TaskSummary:
    task: int
    completed: bool
    completion_step: int | None
    completed_by: int | None


@dataclass(frozen=True)
class RunSummary:
    robots: tuple[RobotSummary, ...]
    tasks: tuple[TaskSummary, ...]
    reallocations: int
    total_churn: float
    total_slack: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunSummary":
        return cls(
            robots=tuple(RobotSummary(**r) for r in data["robots"]),
            tasks=tuple(TaskSummary(**t) for t in data["tasks"]),
            reallocations=data["reallocations"],
            total_churn=data["total_churn"],
            total_slack=data["total_slack"],
        )


@dataclass
class RunLog:
    """Records of one run, its config, effective fault starts and summary."""

    config: ScenarioConfig
    records: list[StepRecord] = field(default_factory=list)
    fault_starts: tuple[int, ...] = ()
    summary: RunSummary | None = None
    aborted: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "fault_starts": list(self.fault_starts),
            "summary": self.summary.to_dict() if self.summary else None,
            "aborted": self.aborted,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunLog":
        from taskwarden.conf import scenario_from_dict  # noqa: PLC0415

        summary = data.get("summary")
        return cls(
            config=scenario_from_dict(data["config"]),
            records=[StepRecord.from_dict(r) for r in data["records"]],
            fault_starts=tuple(data.get("fault_starts", ())),
            summary=RunSummary.from_dict(summary) if summary else None,
            aborted=data.get("aborted"),
        )

    @property
    def n_robots(self) -> int:
        return self.config.n_robots

    def robot_fault_start(self, robot: int) -> int | None:
        """Earliest effective start among faults injected on `robot`."""
        starts = [
            start
            for fault, start in zip(self.config.faults, self.fault_starts, strict=True)
            if fault.robot == robot
        ]
        return min(starts) if starts else None


def healthy_nis_samples(log: RunLog, robot: int) -> list[float]:
    """NIS values of `robot` past each stream's burn-in window."""
    window = log.config.detector.window
    return [
        record.nis[robot]
        for record in log.records
        if record.nis[robot] is not None and record.stream_age[robot] > window
    ]


def _first_fault_step(log: RunLog, robot: int) -> int | None:
    for record in log.records:
        if record.labels[robot] is HealthLabel.FAULT:
            return record.step
    return None


def _assignment_at(log: RunLog, step: int, robot: int) -> int | None:
    index = min(max(step, 0), len(log.records) - 1)
    return log.records[index].assignment[robot]


def summarize(log: RunLog, completions: dict[int, tuple[int, int]]) -> RunSummary:
    """Build the run summary from the records.

    Args:
        log: the run's records.
        completions: task -> (completion step, robot) for finished tasks.

    """
    n = log.n_robots
    detections = [_first_fault_step(log, i) for i in range(n)]
    starts = list(log.fault_starts)
    before_ref = min(starts) if starts else 0
    detected = [d for d in detections if d is not None]
    after_ref = min(detected) if detected else before_ref

    after_record = next(
        (r for r in log.records if r.reallocated and r.step >= after_ref),
        log.records[-1] if log.records else None,
    )

    robots = []
    for i in range(n):
        fault_start = log.robot_fault_start(i)
        faulty = fault_start is not None
        nis_mean = nis_std = None
        if not faulty and detections[i] is None:
            samples = healthy_nis_samples(log, i)
            if len(samples) > 1:
                nis_mean = float(np.mean(samples))
                nis_std = float(np.std(samples, ddof=1))
        robots.append(
            RobotSummary(
                robot=i,
                faulty=faulty,
                task_before=(
                    _assignment_at(log, before_ref - 1, i) if log.records else None
                ),
                task_after=after_record.assignment[i] if after_record else None,
                fault_init_step=fault_start,
                fault_det_step=detections[i],
                completed=any(by == i for _, by in completions.values()),
                nis_mean=nis_mean,
                nis_std=nis_std,
            ),
        )

    tasks = tuple(
        TaskSummary(
            task=k,
            completed=k in completions,
            completion_step=completions[k][0] if k in completions else None,
            completed_by=completions[k][1] if k in completions else None,
        )
        for k in range(log.config.n_tasks)
    )
    churn = [r.churn for r in log.records if r.churn is not None]
    return RunSummary(
        robots=tuple(robots),
        tasks=tasks,
        reallocations=sum(r.reallocated for r in log.records),
        total_churn=float(sum(churn)),
        total_slack=float(sum(r.slack for r in log.records)),
    )
