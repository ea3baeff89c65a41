"""Run metrics and Monte-Carlo sweeps.

Everything here reads `RunLog` records only, so metrics can be recomputed
from a saved log and compared with the summary the simulator wrote.
"""

import logging
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from taskwarden.detector import HealthLabel
from taskwarden.exceptions import ConfigError, MetricsError
from taskwarden.runlog import RunLog, healthy_nis_samples
from taskwarden.scenario import FaultKind, ScenarioConfig
from taskwarden.simulator import run_scenario

__all__ = [
    "ChurnSeries",
    "FaultTypeRow",
    "RocCurve",
    "SweepPoint",
    "SweepResult",
    "churn_series",
    "completion_summary",
    "detection_delay",
    "detection_scores",
    "false_alarm_rate",
    "fault_type_summary",
    "lag1_autocorrelation",
    "nis_stats",
    "roc_and_accuracy_sweep",
    "roc_curve",
    "run_accuracy",
    "timing_summary",
]

logger = logging.getLogger(__name__)

_FLAGGED = frozenset({HealthLabel.SUSPECT, HealthLabel.FAULT})


def _fault_onset(log: RunLog, robot: int) -> int:
    onset = log.robot_fault_start(robot)
    if onset is None:
        msg = f"no fault was injected on robot {robot}."
        raise MetricsError(msg)
    return onset


def detection_delay(log: RunLog, robot: int) -> int | None:
    """Steps from fault onset to the robot's first Fault label.

    A Fault label before the onset is a false alarm, not a detection.

    Returns:
        The delay, or None when the fault was never detected or the robot
        was already declared Fault before the onset.

    Raises:
        MetricsError: if no fault was injected on `robot`.

    """
    onset = _fault_onset(log, robot)
    first = next(
        (r.step for r in log.records if r.labels[robot] is HealthLabel.FAULT),
        None,
    )
    if first is None or first < onset:
        return None
    return first - onset


def nis_stats(log: RunLog, robot: int) -> tuple[float, float]:
    """Sample mean and standard deviation of a healthy robot's NIS.

    The first `window` samples of every stream are skipped as burn-in.
    """
    if log.robot_fault_start(robot) is not None or any(
        r.labels[robot] is HealthLabel.FAULT for r in log.records
    ):
        msg = f"robot {robot} was faulted; NIS statistics cover healthy robots only."
        raise MetricsError(msg)
    samples = np.asarray(healthy_nis_samples(log, robot))
    if samples.size < 2:  # noqa: PLR2004
        msg = f"robot {robot} has fewer than two NIS samples past burn-in."
        raise MetricsError(msg)
    return float(np.mean(samples)), float(np.std(samples, ddof=1))


def _false_alarm_counts(log: RunLog) -> tuple[int, int]:
    flagged = total = 0
    onsets = [log.robot_fault_start(i) for i in range(log.n_robots)]
    for record in log.records:
        for robot, age in enumerate(record.stream_age):
            onset = onsets[robot]
            if age == 0 or (onset is not None and record.step >= onset):
                continue
            total += 1
            flagged += record.labels[robot] in _FLAGGED
    return flagged, total


def false_alarm_rate(logs: Sequence[RunLog]) -> float:
    """Fraction of healthy stream-steps labelled Suspect or Fault.

    A stream-step is healthy when its robot has no fault injected yet.
    """
    counts = [_false_alarm_counts(log) for log in logs]
    total = sum(t for _, t in counts)
    return sum(f for f, _ in counts) / total if total else 0.0


@dataclass(frozen=True)
class ChurnSeries:
    values: tuple[float, ...]
    solve_count: int

    @property
    def total(self) -> float:
        return float(sum(self.values))


def churn_series(log: RunLog) -> ChurnSeries:
    """l1 churn of every re-solve after the first, plus the number of solves."""
    values = tuple(
        r.churn for r in log.records if r.reallocated and r.churn is not None
    )
    return ChurnSeries(values, sum(r.reallocated for r in log.records))


@dataclass(frozen=True)
class RocCurve:
    """ROC points sorted by false-positive rate, with their thresholds."""

    points: tuple[tuple[float, float], ...]
    thresholds: tuple[float, ...]
    auc: float


def roc_curve(pos_scores, neg_scores) -> RocCurve:
    """ROC of a `score >= threshold` detector over every distinct threshold.

    The area is the trapezoid rule over the sorted points.
    """
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        msg = "ROC needs at least one positive and one negative score."
        raise MetricsError(msg)
    thresholds = np.concatenate([[np.inf], np.unique(np.concatenate([pos, neg]))[::-1]])
    tpr = np.array([(pos >= t).mean() for t in thresholds])
    fpr = np.array([(neg >= t).mean() for t in thresholds])
    order = np.lexsort((tpr, fpr))
    fpr, tpr, thresholds = fpr[order], tpr[order], thresholds[order]
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(
        points=tuple((float(f), float(t)) for f, t in zip(fpr, tpr, strict=True)),
        thresholds=tuple(float(t) for t in thresholds),
        auc=auc,
    )


def detection_scores(log: RunLog, robot: int, from_step: int = 0) -> float:
    """Largest windowed NIS of `robot` from `from_step` on (0 if none)."""
    values = [
        r.windowed_nis[robot]
        for r in log.records
        if r.step >= from_step and r.windowed_nis[robot] is not None
    ]
    return max(values, default=0.0)


def run_accuracy(log: RunLog, robot: int) -> bool:
    """True when `robot` is first declared Fault at or after its onset.

    Any Fault label before the onset, or on another robot, makes the run
    inaccurate.
    """
    if detection_delay(log, robot) is None:
        return False
    return not any(
        label is HealthLabel.FAULT
        for r in log.records
        for other, label in enumerate(r.labels)
        if other != robot
    )


def lag1_autocorrelation(values) -> float:
    """Lag-1 sample autocorrelation; near zero for a white sequence."""
    x = np.asarray(values, dtype=float)
    if x.size < 3:  # noqa: PLR2004
        msg = "autocorrelation needs at least three samples."
        raise MetricsError(msg)
    x = x - x.mean()
    denom = float(x @ x)
    return float(x[1:] @ x[:-1]) / denom if denom > 0 else 0.0


def completion_summary(log: RunLog) -> dict[str, float | int | None]:
    """Completion rate and times, slack usage and reallocation frequency."""
    summary = log.summary
    tasks = summary.tasks if summary else ()
    done = [t.completion_step for t in tasks if t.completed]
    steps = len(log.records)
    return {
        "tasks": len(tasks),
        "completed": len(done),
        "completion_rate": len(done) / len(tasks) if tasks else 0.0,
        "mean_completion_step": float(np.mean(done)) if done else None,
        "last_completion_step": max(done) if done else None,
        "total_slack": float(sum(r.slack for r in log.records)),
        "slack_steps": sum(r.slack > 1e-6 for r in log.records),  # noqa: PLR2004
        "reallocations": sum(r.reallocated for r in log.records),
        "reallocation_frequency": (
            sum(r.reallocated for r in log.records) / steps if steps else 0.0
        ),
    }


def timing_summary(log: RunLog) -> dict[str, float]:
    """Mean and worst per-step detector and QP times in seconds."""
    records = log.records
    det = np.array([r.detector_time for r in records]) if records else np.zeros(1)
    qp = np.array([r.qp_time for r in records]) if records else np.zeros(1)
    return {
        "detector_mean_s": float(det.mean()),
        "detector_max_s": float(det.max()),
        "qp_mean_s": float(qp.mean()),
        "qp_max_s": float(qp.max()),
    }


# ---- sweeps -------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    magnitude: float
    runs: int
    detections: int
    accuracy: float
    median_delay: float | None
    roc: RocCurve


@dataclass(frozen=True)
class SweepResult:
    """Accuracy and ROC per magnitude, plus a ROC pooled over magnitudes."""

    kind: FaultKind
    robot: int
    points: tuple[SweepPoint, ...] = ()
    roc: RocCurve | None = None

    @property
    def magnitudes(self) -> list[float]:
        return [p.magnitude for p in self.points]

    @property
    def accuracy(self) -> list[float]:
        return [p.accuracy for p in self.points]

    @property
    def roc_points(self) -> tuple[tuple[float, float], ...]:
        return self.roc.points if self.roc else ()

    @property
    def auc(self) -> float | None:
        return self.roc.auc if self.roc else None


@dataclass(frozen=True)
class _RunOutcome:
    accurate: bool
    delay: int | None
    positive: float
    negatives: tuple[float, ...] = field(default=())
    flagged: int = 0
    healthy_steps: int = 0


def _sweep_job(config: ScenarioConfig, robot: int) -> _RunOutcome:
    log = run_scenario(config)
    onset = _fault_onset(log, robot)
    negatives = tuple(
        detection_scores(log, other, onset)
        for other in range(log.n_robots)
        if other != robot and log.robot_fault_start(other) is None
    )
    flagged, healthy_steps = _false_alarm_counts(log)
    return _RunOutcome(
        accurate=run_accuracy(log, robot),
        delay=detection_delay(log, robot),
        positive=detection_scores(log, robot, onset),
        negatives=negatives,
        flagged=flagged,
        healthy_steps=healthy_steps,
    )


def _check_counts(runs: int, jobs: int) -> None:
    if runs < 1:
        msg = f"runs must be at least 1, got {runs}."
        raise ConfigError(msg)
    if jobs < 1:
        msg = f"jobs must be at least 1, got {jobs}."
        raise ConfigError(msg)


def roc_and_accuracy_sweep(
    base_config: ScenarioConfig,
    kind: FaultKind | str,
    magnitudes: Sequence[float],
    runs_per_magnitude: int,
    *,
    jobs: int = 1,
) -> SweepResult:
    """Monte-Carlo accuracy and ROC over fault magnitudes.

    Every magnitude runs seeds `base_config.seed + 0 .. runs - 1`. The
    positive score of a run is the faulted robot's largest windowed NIS after
    onset; each healthy robot over the same interval gives a negative.

    Args:
        base_config: a scenario with at least one fault of `kind`.
        kind: fault kind whose magnitude is swept.
        magnitudes: magnitudes to evaluate, in output order.
        runs_per_magnitude: seeds per magnitude.
        jobs: worker processes; 1 runs in-process.

    Raises:
        ConfigError: if `runs_per_magnitude` or `jobs` is below 1.
        MetricsError: if `base_config` injects no fault of `kind`.

    """
    _check_counts(runs_per_magnitude, jobs)
    kind = FaultKind(kind)
    target = next((f for f in base_config.faults if f.kind is kind), None)
    if target is None:
        msg = f"scenario {base_config.name!r} injects no {kind} fault to sweep."
        raise MetricsError(msg)
    if not magnitudes:
        return SweepResult(kind=kind, robot=target.robot)

    configs = [
        base_config.with_fault_magnitude(kind, float(magnitude)).replace(
            seed=base_config.seed + run,
        )
        for magnitude in magnitudes
        for run in range(runs_per_magnitude)
    ]
    outcomes = _run_jobs(configs, target.robot, jobs)

    points = []
    all_pos: list[float] = []
    all_neg: list[float] = []
    for index, magnitude in enumerate(magnitudes):
        chunk = outcomes[index * runs_per_magnitude : (index + 1) * runs_per_magnitude]
        pos = [o.positive for o in chunk]
        neg = [s for o in chunk for s in o.negatives]
        delays = [o.delay for o in chunk if o.delay is not None]
        points.append(
            SweepPoint(
                magnitude=float(magnitude),
                runs=len(chunk),
                detections=len(delays),
                accuracy=sum(o.accurate for o in chunk) / len(chunk) if chunk else 0.0,
                median_delay=float(np.median(delays)) if delays else None,
                roc=roc_curve(pos, neg),
            ),
        )
        all_pos += pos
        all_neg += neg
        logger.info("sweep %s=%g: accuracy %.3f", kind, magnitude, points[-1].accuracy)

    return SweepResult(
        kind=kind,
        robot=target.robot,
        points=tuple(points),
        roc=roc_curve(all_pos, all_neg),
    )


def _run_jobs(
    configs: list[ScenarioConfig],
    robot: int,
    jobs: int,
) -> list[_RunOutcome]:
    robots = [robot] * len(configs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_job, configs, robots))
    return [_sweep_job(c, r) for c, r in zip(configs, robots, strict=True)]


@dataclass(frozen=True)
class FaultTypeRow:
    kind: FaultKind
    scenario: str
    runs: int
    detection_rate: float
    median_delay: float | None
    false_alarm_rate: float

    def to_dict(self) -> dict[str, object]:
        return {
            "kind": str(self.kind),
            "scenario": self.scenario,
            "runs": self.runs,
            "detection_rate": self.detection_rate,
            "median_delay": self.median_delay,
            "false_alarm_rate": self.false_alarm_rate,
        }


def fault_type_summary(
    config: ScenarioConfig,
    runs: int,
    *,
    jobs: int = 1,
) -> FaultTypeRow:
    """Detection rate, median delay and false-alarm rate of a faulted scenario."""
    _check_counts(runs, jobs)
    if not config.faults:
        msg = f"scenario {config.name!r} injects no fault."
        raise MetricsError(msg)
    fault = config.faults[0]
    configs = [config.replace(seed=config.seed + run) for run in range(runs)]
    outcomes = _run_jobs(configs, fault.robot, jobs)
    delays = [o.delay for o in outcomes if o.delay is not None]
    healthy = sum(o.healthy_steps for o in outcomes)
    return FaultTypeRow(
        kind=fault.kind,
        scenario=config.name,
        runs=runs,
        detection_rate=len(delays) / runs if runs else 0.0,
        median_delay=float(np.median(delays)) if delays else None,
        false_alarm_rate=sum(o.flagged for o in outcomes) / healthy if healthy else 0.0,
    )
