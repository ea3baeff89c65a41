"""Configuration script for Pytest."""

import numpy as np
import pytest

from taskwarden.allocator import TeamSpec
from taskwarden.scenario import ScenarioConfig, TeamConfig

STARTS = ((0.3, 0.1), (0.5, 0.1), (0.75, 0.1), (0.9, 0.1))
GOALS = ((0.35, 0.5), (0.75, 0.75), (0.85, 0.55))


@pytest.fixture
def backup_spec() -> TeamSpec:
    """Three robots, two tasks; robot 1 can stand in for either specialist."""
    return TeamSpec(
        specialization=np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        base_weights=np.array([[0.1, 9.0], [0.5, 0.5], [9.0, 0.1]]),
        base_slack_cost=5.0,
    )


@pytest.fixture
def team() -> TeamConfig:
    """The four-robot, three-task layout with one specialist per task."""
    return TeamConfig(
        robot_starts=STARTS,
        task_goals=GOALS,
        specialization=((1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 1)),
        base_weights=(
            (0.403, 0.791, 0.711),
            (0.427, 0.696, 0.570),
            (0.566, 0.650, 0.461),
            (0.680, 0.667, 5.0),
        ),
    )


@pytest.fixture
def make_scenario(team):
    """Build a scenario over the default team with keyword overrides."""

    def _make(**kwargs) -> ScenarioConfig:
        kwargs.setdefault("team", team)
        kwargs.setdefault("steps", 80)
        return ScenarioConfig(**kwargs)

    return _make
