"""Progress-based fault detector.

Each (robot, task) stream feeds its normalized innovation squared (NIS) into
a windowed chi-square test. Two operational gates sit alongside the test:

- a stall gate that fires when the estimated progress rate stays near zero;
- an uncertainty gate that suspends judgement while the filter covariance is
  too large to support a decision (e.g. during a communication outage).

Triggers are debounced into a health label:

    Healthy -> Suspect -> Fault, with Uninformative while gated.

Fault is sticky unless the config allows recovery.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import StrEnum
from functools import lru_cache

from scipy.optimize import bisect
from scipy.special import gammainc

from taskwarden.exceptions import DetectorError

__all__ = [
    "DetectorConfig",
    "DetectorState",
    "HealthLabel",
    "NaiveConfig",
    "NaiveState",
    "chi2_threshold",
    "confidence",
    "detector_step",
    "naive_step",
    "nis",
    "windowed_nis",
    "windowed_threshold",
]

logger = logging.getLogger(__name__)

_QUANTILE_XTOL = 1e-12


class HealthLabel(StrEnum):
    """Health of one robot as seen by the detector."""

    HEALTHY = "healthy"
    SUSPECT = "suspect"
    FAULT = "fault"
    UNINFORMATIVE = "uninformative"


@dataclass(frozen=True)
class DetectorConfig:
    """Detector thresholds and debounce counts.

    `window` is the NIS averaging window, `stall_dwell` the number of
    consecutive low-rate steps that count as a stall, and `k_suspect`,
    `k_fault`, `k_out` the debounce counts for escalation and decay.
    """

    alpha: float = 0.05
    window: int = 15
    beta: float = 0.005
    stall_dwell: int = 4
    gamma: float = 0.01
    k_suspect: int = 2
    k_fault: int = 5
    k_out: int = 10
    eta: float = 1.0
    rate_gate: bool = True
    uncertainty_gate: bool = True
    allow_fault_recovery: bool = False

    def __post_init__(self) -> None:
        """Validate ranges and debounce ordering."""
        if not 0.0 < self.alpha < 1.0:
            msg = f"alpha must lie in (0, 1), got {self.alpha}."
            raise DetectorError(msg)
        for name in ("window", "stall_dwell", "k_suspect", "k_fault", "k_out"):
            if getattr(self, name) < 1:
                msg = f"{name} must be at least 1, got {getattr(self, name)}."
                raise DetectorError(msg)
        if self.k_fault <= self.k_suspect:
            msg = "k_fault must be larger than k_suspect."
            raise DetectorError(msg)
        for name in ("beta", "gamma", "eta"):
            if getattr(self, name) <= 0:
                msg = f"{name} must be positive, got {getattr(self, name)}."
                raise DetectorError(msg)

    @property
    def tau(self) -> float:
        """Single-sample NIS threshold used by the confidence score."""
        return chi2_threshold(self.alpha, 1)


@dataclass
class DetectorState:
    """Counters and NIS window of one stream.

    The window keeps a running sum so each step costs O(1).
    """

    label: HealthLabel = HealthLabel.HEALTHY
    trigger_run: int = 0
    clear_run: int = 0
    stall_run: int = 0
    confidence: float = 0.0
    nis_window: deque = field(default_factory=deque)
    window_sum: float = 0.0
    window_stat: float | None = None

    @classmethod
    def fresh(cls, window: int, label: HealthLabel = HealthLabel.HEALTHY):
        """Empty state for a new stream, optionally inheriting a label."""
        return cls(label=label, nis_window=deque(maxlen=window))

    def push(self, d: float) -> None:
        if len(self.nis_window) == self.nis_window.maxlen:
            self.window_sum -= self.nis_window[0]
        self.nis_window.append(d)
        self.window_sum += d


def nis(innovation: float, S: float) -> float:
    """Normalized innovation squared `innovation^2 / S`."""
    if not S > 0:
        msg = f"innovation variance must be positive, got {S}."
        raise DetectorError(msg)
    return innovation * innovation / S


@lru_cache(maxsize=1024)
def chi2_threshold(alpha: float, dof: int) -> float:
    """Upper `alpha` quantile of the chi-square distribution with `dof` dof.

    Solves `P(dof/2, x/2) = 1 - alpha` for x by bisection, where P is the
    regularized lower incomplete gamma function.
    """
    if not 0.0 < alpha < 1.0:
        msg = f"alpha must lie in (0, 1), got {alpha}."
        raise DetectorError(msg)
    if dof < 1:
        msg = f"degrees of freedom must be at least 1, got {dof}."
        raise DetectorError(msg)

    target = 1.0 - alpha

    def excess(x: float) -> float:
        return gammainc(dof / 2.0, x / 2.0) - target

    hi = max(1.0, 2.0 * dof)
    while excess(hi) < 0:
        hi *= 2.0
    return bisect(excess, 0.0, hi, xtol=_QUANTILE_XTOL, maxiter=500)


def windowed_nis(window, w: int) -> float:
    """Mean of the last `min(w, n)` NIS values."""
    values = list(window)[-w:]
    if not values:
        msg = "windowed NIS needs at least one value."
        raise DetectorError(msg)
    return math.fsum(values) / len(values)


def windowed_threshold(alpha: float, n: int) -> float:
    """Threshold for a mean of `n` NIS values: `chi2_threshold(alpha, n) / n`."""
    return chi2_threshold(alpha, n) / n


def confidence(d: float, tau: float, eta: float) -> float:
    """Fault confidence: 0 up to `tau`, rising linearly to 1 at `tau * (1 + eta)`."""
    return min(1.0, max(0.0, (d / tau - 1.0) / eta))


def _escalate(state: DetectorState, cfg: DetectorConfig) -> None:
    label = state.label
    if label is HealthLabel.HEALTHY:
        if state.trigger_run >= cfg.k_suspect:
            state.label = HealthLabel.SUSPECT
    elif label is HealthLabel.SUSPECT:
        if state.trigger_run >= cfg.k_fault:
            state.label = HealthLabel.FAULT
        elif state.clear_run >= cfg.k_out:
            state.label = HealthLabel.HEALTHY
    elif label is HealthLabel.UNINFORMATIVE:
        # Never straight to Fault: an outage ends through Suspect or Healthy.
        if state.trigger_run >= cfg.k_suspect:
            state.label = HealthLabel.SUSPECT
        elif state.clear_run >= cfg.k_out:
            state.label = HealthLabel.HEALTHY
    elif cfg.allow_fault_recovery and state.clear_run >= cfg.k_out:
        state.label = HealthLabel.SUSPECT
        state.clear_run = 0


def detector_step(
    state: DetectorState,
    cfg: DetectorConfig,
    d: float | None,
    r_dot_hat: float,
    trace_P: float,
) -> tuple[DetectorState, HealthLabel, float]:
    """Advance one stream's detector by one step.

    Args:
        state: the stream's detector state, updated in place.
        cfg: detector configuration.
        d: this step's NIS, or None when no measurement arrived.
        r_dot_hat: estimated progress rate.
        trace_P: trace of the current filter covariance.

    Returns:
        The updated state, its label and this step's confidence.

    """
    nis_trigger = False
    if d is not None:
        state.push(d)
        n = len(state.nis_window)
        state.window_stat = state.window_sum / n
        nis_trigger = state.window_stat > windowed_threshold(cfg.alpha, n)

    if abs(r_dot_hat) < cfg.beta:
        state.stall_run += 1
    else:
        state.stall_run = 0
    stall_trigger = cfg.rate_gate and state.stall_run >= cfg.stall_dwell

    state.confidence = 0.0 if d is None else confidence(d, cfg.tau, cfg.eta)

    if cfg.uncertainty_gate and trace_P > cfg.gamma:
        # Counters freeze while gated.
        if state.label is not HealthLabel.FAULT:
            state.label = HealthLabel.UNINFORMATIVE
        return state, state.label, state.confidence

    if nis_trigger or stall_trigger:
        state.trigger_run += 1
        state.clear_run = 0
    else:
        state.clear_run += 1
        state.trigger_run = 0

    previous = state.label
    _escalate(state, cfg)
    if state.label is not previous:
        logger.debug(
            "detector %s -> %s (trigger_run=%d, clear_run=%d)",
            previous,
            state.label,
            state.trigger_run,
            state.clear_run,
        )
    return state, state.label, state.confidence


# ---- naive threshold baseline ------------------------------------------


@dataclass(frozen=True)
class NaiveConfig:
    """Fixed-threshold baseline without a filter.

    A sample is bad when the measured progress rate is below `theta_rate`,
    or when progress is still below `theta_progress` after `grace_steps`
    samples. `dwell` consecutive bad samples declare a fault.
    """

    theta_rate: float = 0.01
    theta_progress: float = 0.05
    dwell: int = 4
    grace_steps: int = 20

    def __post_init__(self) -> None:
        """Validate dwell and grace counts."""
        if self.dwell < 1 or self.grace_steps < 0:
            msg = "naive detector needs dwell >= 1 and grace_steps >= 0."
            raise DetectorError(msg)


@dataclass
class NaiveState:
    label: HealthLabel = HealthLabel.HEALTHY
    bad_run: int = 0


def naive_step(
    state: NaiveState,
    cfg: NaiveConfig,
    measured_rate: float | None,
    measured_progress: float | None,
    age: int,
) -> tuple[NaiveState, HealthLabel]:
    """Advance the naive baseline by one sample (None means no sample)."""
    if state.label is HealthLabel.FAULT or measured_rate is None:
        return state, state.label
    slow = measured_rate < cfg.theta_rate
    behind = age > cfg.grace_steps and measured_progress < cfg.theta_progress
    state.bad_run = state.bad_run + 1 if slow or behind else 0
    if state.bad_run >= cfg.dwell:
        state.label = HealthLabel.FAULT
    return state, state.label
