"""TaskWarden main package."""

from taskwarden.conf import load_scenario
from taskwarden.detector import DetectorConfig, HealthLabel
from taskwarden.runlog import RunLog
from taskwarden.scenario import FaultKind, FaultSpec, ScenarioConfig
from taskwarden.simulator import run_scenario

__all__ = [
    "DetectorConfig",
    "FaultKind",
    "FaultSpec",
    "HealthLabel",
    "RunLog",
    "ScenarioConfig",
    "load_scenario",
    "run_scenario",
]
