"""Custom exception types for TaskWarden.

All library-specific errors derive from `TaskWardenError`. Catch that base
class if you want to handle any TaskWarden failure in a single place.
"""

__all__ = [
    "AllocationError",
    "AllocationInfeasibleError",
    "ConfigError",
    "DetectorError",
    "EstimatorError",
    "MetricsError",
    "OutputExistsError",
    "ProgressError",
    "QpError",
    "SimulationError",
    "TaskWardenError",
]


class TaskWardenError(Exception):
    """Base class for all TaskWarden exceptions."""


class ConfigError(TaskWardenError):
    """Configuration problem.

    Examples:
        - Unreadable scenario file or TOML syntax error
        - A value violating its type invariant (e.g. `detector.alpha = 2.0`)
        - A `--set key=value` override naming an unknown key

    """


class ProgressError(TaskWardenError):
    """A progress signal cannot be formed from the given task state.

    Raised for zero-length tasks, empty workloads and malformed composite
    weights.
    """


class EstimatorError(TaskWardenError):
    """Invalid input to the progress Kalman filter."""


class DetectorError(TaskWardenError):
    """Invalid detector configuration or input (e.g. a non-positive S)."""


class QpError(TaskWardenError):
    """A QP is malformed: inconsistent dimensions or a non-PSD P."""


class AllocationError(TaskWardenError):
    """The allocation QP could not be solved to an acceptable point."""


class AllocationInfeasibleError(AllocationError):
    """The allocation QP was reported infeasible.

    The slack variables make the formulation feasible by construction
    (u = 0, alpha = 0), so this points to a bug or a corrupted input.
    """


class SimulationError(TaskWardenError):
    """The simulator was asked for something its world state cannot give.

    Examples:
        - Measuring progress for a robot-task pair that is not assigned
        - A control array with the wrong number of robots

    """


class MetricsError(TaskWardenError):
    """A metric was requested outside its preconditions."""


class OutputExistsError(TaskWardenError):
    """Refusing to overwrite an existing report file without `force`."""
