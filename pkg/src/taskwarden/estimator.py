"""Two-state Kalman filter on task progress.

The state is `[r, r_dot]`: normalized progress and its rate in progress per
second. Two transition models are supported:

- CV (constant velocity): `A = [[1, dt], [0, 1]]`, no input.
- RT (rate tracking): `A = [[1, 0], [0, 0]]`, `B = [dt, 1]^T`, driven by the
  nominal commanded progress rate.

Both observe progress only (`C = [1, 0]`). Covariances are scaled by the task
length so a 2 cm position error weighs more on a short task than on a long
one.
"""

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from taskwarden.exceptions import EstimatorError

__all__ = [
    "DEFAULT_L_MIN",
    "DEFAULT_Q0_BASE",
    "KfModel",
    "KfState",
    "KfVariant",
    "adapt_process_noise",
    "dropout_covariance",
    "kf_init",
    "kf_predict",
    "kf_update",
    "max_informative_outage",
    "scale_covariances",
]

logger = logging.getLogger(__name__)

DEFAULT_Q0_BASE = np.diag([1e-6, 5e-5])
DEFAULT_L_MIN = 0.02
DEFAULT_OUTAGE_CAP = 10**6
_PSD_TOL = 1e-12
_C = np.array([1.0, 0.0])


def _check_psd(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (2, 2):
        msg = f"{name} must be 2x2, got shape {matrix.shape}."
        raise EstimatorError(msg)
    if not np.allclose(matrix, matrix.T, atol=_PSD_TOL):
        msg = f"{name} must be symmetric."
        raise EstimatorError(msg)
    if np.linalg.eigvalsh(matrix).min() < -_PSD_TOL:
        msg = f"{name} must be positive semi-definite."
        raise EstimatorError(msg)
    return matrix


class KfVariant(StrEnum):
    """Transition model of the progress filter."""

    CV = "cv"
    RT = "rt"


@dataclass(frozen=True, eq=False)
class KfModel:
    """Matrices of one progress filter.

    Build instances with `KfModel.cv` or `KfModel.rt`, which fill in `A`,
    `B` and `C` for the chosen variant.
    """

    variant: KfVariant
    dt: float
    A: np.ndarray
    B: np.ndarray | None
    C: np.ndarray
    Q: np.ndarray
    R: float

    def __post_init__(self) -> None:
        """Validate step size and noise covariances."""
        if self.dt <= 0:
            msg = f"dt must be positive, got {self.dt}."
            raise EstimatorError(msg)
        object.__setattr__(self, "Q", _check_psd(self.Q, "Q"))
        if not self.R > 0:
            msg = f"R must be positive, got {self.R}."
            raise EstimatorError(msg)

    @classmethod
    def cv(cls, dt: float, Q, R: float) -> "KfModel":
        """Constant-velocity model."""
        A = np.array([[1.0, dt], [0.0, 1.0]])
        return cls(KfVariant.CV, dt, A, None, _C.copy(), np.asarray(Q, float), R)

    @classmethod
    def rt(cls, dt: float, Q, R: float) -> "KfModel":
        """Rate-tracking model driven by the nominal progress rate."""
        A = np.array([[1.0, 0.0], [0.0, 0.0]])
        B = np.array([dt, 1.0])
        return cls(KfVariant.RT, dt, A, B, _C.copy(), np.asarray(Q, float), R)

    @classmethod
    def for_variant(cls, variant: KfVariant | str, dt: float, Q, R: float):
        """Build the model for `variant` by name."""
        if KfVariant(variant) is KfVariant.CV:
            return cls.cv(dt, Q, R)
        return cls.rt(dt, Q, R)

    def with_noise(self, Q, R: float) -> "KfModel":
        """Return a copy of this model with new noise covariances."""
        return KfModel(self.variant, self.dt, self.A, self.B, self.C, Q, R)


@dataclass(frozen=True, eq=False)
class KfState:
    """Posterior estimate plus the most recent prior."""

    x_hat: np.ndarray
    P: np.ndarray
    x_prior: np.ndarray
    P_prior: np.ndarray

    @property
    def progress(self) -> float:
        return float(self.x_hat[0])

    @property
    def rate(self) -> float:
        return float(self.x_hat[1])

    @property
    def trace(self) -> float:
        return float(np.trace(self.P))


def kf_init(r0: float, rdot0: float, P0) -> KfState:
    """Start a filter at progress `r0` with rate `rdot0` and covariance `P0`."""
    if not 0.0 <= r0 <= 1.0:
        msg = f"initial progress must lie in [0, 1], got {r0}."
        raise EstimatorError(msg)
    P = _check_psd(P0, "P0").copy()
    x = np.array([float(r0), float(rdot0)])
    return KfState(x, P, x.copy(), P.copy())


def kf_predict(state: KfState, model: KfModel, u: float | None = None) -> KfState:
    """Propagate the estimate one step.

    RT models need the nominal progress rate `u`; CV models take no input.
    The returned state carries the prior as its current estimate too, so
    repeated calls without an update model a measurement outage.
    """
    if model.variant is KfVariant.RT:
        if u is None:
            msg = "the rate-tracking model needs the nominal progress rate u."
            raise EstimatorError(msg)
        x_prior = model.A @ state.x_hat + model.B * float(u)
    else:
        if u is not None:
            msg = "the constant-velocity model takes no control input."
            raise EstimatorError(msg)
        x_prior = model.A @ state.x_hat
    P_prior = model.A @ state.P @ model.A.T + model.Q
    return KfState(x_prior, P_prior, x_prior, P_prior)


def kf_update(state: KfState, model: KfModel, y) -> tuple[KfState, float, float]:
    """Correct the prior with one progress measurement.

    Returns:
        The posterior state, the innovation and its variance `S`.

    Raises:
        EstimatorError: if `y` is outside [0, 1] or `S` is not positive.

    """
    y = float(y)
    if not 0.0 <= y <= 1.0:
        msg = f"progress measurement must lie in [0, 1], got {y}."
        raise EstimatorError(msg)

    innovation = y - float(model.C @ state.x_prior)
    S = float(model.C @ state.P_prior @ model.C) + model.R
    if not S > 0:
        msg = "degenerate innovation covariance (S <= 0)."
        raise EstimatorError(msg)

    K = state.P_prior @ model.C / S
    x_hat = state.x_prior + K * innovation
    P = (np.eye(2) - np.outer(K, model.C)) @ state.P_prior
    P = 0.5 * (P + P.T)
    return KfState(x_hat, P, state.x_prior, state.P_prior), innovation, S


def scale_covariances(
    L: float,
    sigma_xy: float,
    Q0_base=None,
    L_min: float = DEFAULT_L_MIN,
) -> tuple[np.ndarray, float]:
    """Map position noise and base process noise into progress units.

    `R = sigma_xy^2 / L^2` and `Q = Q0_base / L^2`. `L` is held at `L_min`
    once it drops below, so covariances stop growing near the goal.
    """
    if L <= 0:
        msg = f"task length L must be positive, got {L}."
        raise EstimatorError(msg)
    q0 = DEFAULT_Q0_BASE if Q0_base is None else _check_psd(Q0_base, "Q0_base")
    length = max(float(L), L_min)
    return q0 / length**2, float(sigma_xy) ** 2 / length**2


def adapt_process_noise(Q, mean_nis: float, lo: float = 0.5, hi: float = 4.0):
    """Scale `Q` by the recent mean NIS, clamped to [lo, hi]."""
    factor = min(hi, max(lo, float(mean_nis)))
    logger.debug("adaptive Q: mean NIS %.3f, factor %.3f", mean_nis, factor)
    return np.asarray(Q, dtype=float) * factor


def dropout_covariance(P, model: KfModel, D: int) -> np.ndarray:
    """Covariance after `D` prediction-only steps.

    Computes `A^D P A^D^T + sum_{j<D} A^j Q A^j^T`. CV and RT models use the
    closed forms of their matrix powers; other matrices sum the series.
    """
    if D < 0:
        msg = f"outage length must be non-negative, got {D}."
        raise EstimatorError(msg)
    P = np.asarray(P, dtype=float)
    if D == 0:
        return P.copy()

    Q = model.Q
    if model.variant is KfVariant.CV:
        a = D * model.dt
        power = np.array([[1.0, a], [0.0, 1.0]])
        s1 = model.dt * D * (D - 1) / 2
        s2 = model.dt**2 * (D - 1) * D * (2 * D - 1) / 6
        q_sum = np.array(
            [
                [
                    D * Q[0, 0] + 2 * s1 * Q[0, 1] + s2 * Q[1, 1],
                    D * Q[0, 1] + s1 * Q[1, 1],
                ],
                [D * Q[0, 1] + s1 * Q[1, 1], D * Q[1, 1]],
            ],
        )
        return power @ P @ power.T + q_sum

    if model.variant is KfVariant.RT:
        # A is idempotent: A^j = A for every j >= 1.
        projected = np.array([[P[0, 0], 0.0], [0.0, 0.0]])
        tail = np.array([[Q[0, 0], 0.0], [0.0, 0.0]])
        return projected + Q + (D - 1) * tail

    out = P.copy()
    for _ in range(D):
        out = model.A @ out @ model.A.T + Q
    return out


def max_informative_outage(
    P,
    model: KfModel,
    gamma: float,
    cap: int = DEFAULT_OUTAGE_CAP,
) -> int | None:
    """Longest outage whose predicted covariance trace stays within `gamma`.

    Returns:
        The largest `D` with `trace(P_D) <= gamma`, capped at `cap`, or `None`
        when `trace(P)` already exceeds `gamma`.

    """
    if np.trace(P) > gamma:
        return None

    def within(d: int) -> bool:
        return float(np.trace(dropout_covariance(P, model, d))) <= gamma

    if within(cap):
        return cap

    # The trace is non-decreasing in D, so search for the first crossing.
    lo, hi = 0, 1
    while within(hi):
        lo, hi = hi, min(2 * hi, cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if within(mid):
            lo = mid
        else:
            hi = mid
    return lo
