"""Tests for the progress signal constructors."""

import math

import pytest

from taskwarden.exceptions import ProgressError
from taskwarden.progress_signal import (
    CompositeMode,
    Progress,
    composite_progress,
    event_progress,
    spatial_progress,
    workload_progress,
)


def test_progress_clamps_and_rejects_nan():
    """Progress values are always inside [0, 1]."""
    assert Progress(1.7).value == 1.0
    assert Progress(-0.2).value == 0.0
    assert float(Progress(0.25)) == 0.25
    with pytest.raises(ProgressError, match="NaN"):
        Progress(math.nan)


def test_spatial_progress_at_start_midpoint_and_goal():
    """Spatial progress runs from 0 at the start to 1 at the goal."""
    start, goal = (0.0, 0.0), (1.0, 0.0)

    assert spatial_progress(start, start, goal).value == 0.0
    assert spatial_progress((0.5, 0.0), start, goal).value == pytest.approx(0.5)
    assert spatial_progress(goal, start, goal).value == 1.0


def test_spatial_progress_snaps_near_the_ends():
    """Values within clip_eps of either end snap to the end."""
    start, goal = (0.0, 0.0), (1.0, 0.0)

    assert spatial_progress((0.995, 0.0), start, goal).value == 1.0
    assert spatial_progress((0.005, 0.0), start, goal).value == 0.0
    assert spatial_progress((0.995, 0.0), start, goal, clip_eps=0.0).value == (
        pytest.approx(0.995)
    )


def test_spatial_progress_clamps_when_moving_away():
    """A robot further from the goal than its start reports 0."""
    assert spatial_progress((-1.0, 0.0), (0.0, 0.0), (1.0, 0.0)).value == 0.0


def test_spatial_progress_rejects_zero_length_task():
    """Start and goal must differ."""
    with pytest.raises(ProgressError, match="zero-length"):
        spatial_progress((0.2, 0.2), (0.3, 0.3), (0.3, 0.3))


def test_workload_progress():
    """Workload progress is the completed fraction."""
    assert workload_progress(3, 4).value == 0.75
    with pytest.raises(ProgressError, match="empty workload"):
        workload_progress(0, 0)
    with pytest.raises(ProgressError, match="outside"):
        workload_progress(5, 4)


def test_event_progress_smooths_a_burst():
    """A burst of completions raises progress gradually, not at once."""
    progress = [event_progress([2, 2], 2, step).value for step in range(8)]

    assert progress[:2] == [0.0, 0.0]
    assert progress[2] == pytest.approx(0.3)
    assert all(a < b for a, b in zip(progress[2:], progress[3:], strict=False))
    assert progress[-1] < 1.0


def test_event_progress_without_smoothing_matches_workload():
    """With smoothing 1 the filter passes the raw count through."""
    assert event_progress([0, 3, 5], 4, 5, smoothing=1.0).value == pytest.approx(0.75)


def test_event_progress_rejects_bad_smoothing():
    with pytest.raises(ProgressError, match="smoothing"):
        event_progress([], 2, 1, smoothing=0.0)


def test_composite_weighted_sum_defaults_to_equal_weights():
    """Without weights every sub-task counts the same."""
    assert composite_progress([0.2, 0.4, 0.6]).value == pytest.approx(0.4)
    assert composite_progress([Progress(1.0), 0.0], weights=[0.25, 0.75]).value == (
        pytest.approx(0.25)
    )


def test_composite_smooth_min_is_exact_for_equal_values():
    """The soft minimum of equal values is that value."""
    result = composite_progress([0.6, 0.6, 0.6], mode=CompositeMode.SMOOTH_MIN)

    assert result.value == pytest.approx(0.6)


def test_composite_smooth_min_tracks_the_laggard():
    """The soft minimum stays close to the slowest sub-task."""
    values = [0.1, 0.9, 0.95]
    result = composite_progress(values, mode="smooth_min", smoothing=50.0).value

    assert min(values) <= result <= min(values) + math.log(3) / 50.0


@pytest.mark.parametrize(
    ("subprogresses", "weights", "message"),
    [
        ([], None, "at least one"),
        ([0.5, 0.5], [1.0], "weights for"),
        ([0.5, 0.5], [1.0, -1.0], "non-negative"),
    ],
)
def test_composite_rejects_malformed_input(subprogresses, weights, message):
    with pytest.raises(ProgressError, match=message):
        composite_progress(subprogresses, weights=weights)
