"""Normalized task-progress signals.

Every constructor here returns a `Progress`, a value in [0, 1] that the
estimator treats as its scalar measurement. Spatial progress covers
navigation tasks, workload progress covers discrete jobs and the composite
forms combine several sub-tasks into one signal.
"""

import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from scipy.signal import lfilter
from scipy.special import logsumexp

from taskwarden.exceptions import ProgressError

__all__ = [
    "CompositeMode",
    "Progress",
    "composite_progress",
    "event_progress",
    "spatial_progress",
    "workload_progress",
]


@dataclass(frozen=True, order=True)
class Progress:
    """A task-progress value, clamped to [0, 1] at construction."""

    value: float

    def __post_init__(self) -> None:
        """Clamp the value and reject NaN."""
        value = float(self.value)
        if math.isnan(value):
            msg = "Progress value must not be NaN."
            raise ProgressError(msg)
        object.__setattr__(self, "value", min(1.0, max(0.0, value)))

    def __float__(self) -> float:
        return self.value


class CompositeMode(StrEnum):
    """How sub-task progress values combine."""

    WEIGHTED_SUM = "weighted_sum"
    SMOOTH_MIN = "smooth_min"


def spatial_progress(
    current_pos,
    start_pos,
    goal_pos,
    clip_eps: float = 0.01,
) -> Progress:
    """Return 1 - |current - goal| / |start - goal|, clamped and snapped.

    Values within `clip_eps` of either end snap to that end so a robot parked
    at its goal reports exactly 1.0.

    Raises:
        ProgressError: if start and goal coincide.

    """
    current = np.asarray(current_pos, dtype=float)
    goal = np.asarray(goal_pos, dtype=float)
    path_length = float(np.linalg.norm(np.asarray(start_pos, dtype=float) - goal))
    if path_length <= 0.0:
        msg = "zero-length task: start and goal positions coincide."
        raise ProgressError(msg)

    value = 1.0 - float(np.linalg.norm(current - goal)) / path_length
    value = min(1.0, max(0.0, value))
    if value < clip_eps:
        value = 0.0
    elif value > 1.0 - clip_eps:
        value = 1.0
    return Progress(value)


def workload_progress(items_done: int, items_assigned: int) -> Progress:
    """Return the completed fraction of a discrete workload."""
    if items_assigned <= 0:
        msg = "empty workload: items_assigned must be positive."
        raise ProgressError(msg)
    if not 0 <= items_done <= items_assigned:
        msg = f"items_done={items_done} outside [0, {items_assigned}]."
        raise ProgressError(msg)
    return Progress(items_done / items_assigned)


def event_progress(
    event_steps,
    items_assigned: int,
    step: int,
    smoothing: float = 0.3,
) -> Progress:
    """Workload progress from an exponentially smoothed completion-event count.

    `event_steps` lists the step at which each item finished. The cumulative
    count over steps 0..`step` runs through a first-order low-pass with
    factor `smoothing`, so a burst of completions raises progress gradually.
    """
    if items_assigned <= 0:
        msg = "empty workload: items_assigned must be positive."
        raise ProgressError(msg)
    if not 0.0 < smoothing <= 1.0:
        msg = f"smoothing must lie in (0, 1], got {smoothing}."
        raise ProgressError(msg)
    if step < 0:
        return Progress(0.0)

    events = np.asarray(sorted(event_steps), dtype=int)
    counts = np.searchsorted(events, np.arange(step + 1), side="right")
    smoothed = lfilter([smoothing], [1.0, smoothing - 1.0], counts.astype(float))
    return Progress(smoothed[-1] / items_assigned)


def composite_progress(
    subprogresses,
    weights=None,
    mode: CompositeMode | str = CompositeMode.WEIGHTED_SUM,
    smoothing: float = 20.0,
) -> Progress:
    """Combine sub-task progress values into one signal.

    Args:
        subprogresses: `Progress` values or floats in [0, 1].
        weights: non-negative weights, one per sub-task. Defaults to equal
            weights summing to one. Only `weighted_sum` uses them.
        mode: `weighted_sum` or `smooth_min`.
        smoothing: the sharpness `s` of the soft minimum.

    Returns:
        The combined progress.

    Raises:
        ProgressError: on an empty list, mismatched lengths or a negative weight.

    """
    values = np.asarray([float(r) for r in subprogresses], dtype=float)
    if values.size == 0:
        msg = "composite progress needs at least one sub-task."
        raise ProgressError(msg)
    if weights is None:
        w = np.full(values.size, 1.0 / values.size)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != values.shape:
            msg = f"got {w.size} weights for {values.size} sub-tasks."
            raise ProgressError(msg)
        if np.any(w < 0):
            msg = "composite weights must be non-negative."
            raise ProgressError(msg)

    mode = CompositeMode(mode)
    if mode is CompositeMode.WEIGHTED_SUM:
        return Progress(float(w @ values))

    if smoothing <= 0:
        msg = f"smoothing must be positive, got {smoothing}."
        raise ProgressError(msg)
    soft = -logsumexp(-smoothing * values) / smoothing
    return Progress(soft + math.log(values.size) / smoothing)
