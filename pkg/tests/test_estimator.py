"""Tests for the progress Kalman filter."""

import numpy as np
import pytest

from taskwarden.estimator import (
    DEFAULT_Q0_BASE,
    KfModel,
    KfVariant,
    adapt_process_noise,
    dropout_covariance,
    kf_init,
    kf_predict,
    kf_update,
    max_informative_outage,
    scale_covariances,
)
from taskwarden.exceptions import EstimatorError

P0 = np.diag([1e-4, 1e-4])


def _scan_outage(P, model, gamma, cap):
    """Reference: grow the covariance step by step until it exceeds gamma."""
    if np.trace(P) > gamma:
        return None
    current = np.asarray(P, dtype=float)
    for d in range(1, cap + 1):
        current = model.A @ current @ model.A.T + model.Q
        if np.trace(current) > gamma:
            return d - 1
    return cap


def test_cv_predict_moves_progress_by_rate():
    """The CV model integrates the rate over one step."""
    model = KfModel.cv(0.1, DEFAULT_Q0_BASE, 1e-4)
    state = kf_predict(kf_init(0.2, 0.5, P0), model)

    np.testing.assert_allclose(state.x_hat, [0.25, 0.5])
    np.testing.assert_allclose(state.P, model.A @ P0 @ model.A.T + model.Q)
    np.testing.assert_allclose(state.x_prior, state.x_hat)


def test_rt_predict_follows_the_nominal_rate():
    """The RT model replaces the rate with the commanded one."""
    model = KfModel.rt(0.1, DEFAULT_Q0_BASE, 1e-4)
    state = kf_predict(kf_init(0.2, 9.0, P0), model, u=0.5)

    np.testing.assert_allclose(state.x_hat, [0.25, 0.5])


def test_predict_checks_the_control_input():
    """RT needs an input and CV refuses one."""
    with pytest.raises(EstimatorError, match="nominal progress rate"):
        kf_predict(kf_init(0.2, 0.0, P0), KfModel.rt(0.1, DEFAULT_Q0_BASE, 1e-4))
    with pytest.raises(EstimatorError, match="no control input"):
        kf_predict(kf_init(0.2, 0.0, P0), KfModel.cv(0.1, DEFAULT_Q0_BASE, 1e-4), u=1.0)


@pytest.mark.parametrize("variant", list(KfVariant))
def test_update_matches_joseph_form(variant):
    """The posterior covariance equals the Joseph-form update."""
    model = KfModel.for_variant(variant, 0.1, DEFAULT_Q0_BASE, 2e-4)
    prior = kf_predict(
        kf_init(0.3, 0.1, P0),
        model,
        u=0.1 if variant is KfVariant.RT else None,
    )
    posterior, innovation, S = kf_update(prior, model, 0.33)

    C = model.C
    K = prior.P_prior @ C / S
    IKC = np.eye(2) - np.outer(K, C)
    joseph = IKC @ prior.P_prior @ IKC.T + model.R * np.outer(K, K)

    assert innovation == pytest.approx(0.33 - prior.x_prior[0])
    assert S == pytest.approx(prior.P_prior[0, 0] + model.R)
    np.testing.assert_allclose(posterior.P, joseph, rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(posterior.P, posterior.P.T)


def test_update_rejects_out_of_range_measurement():
    model = KfModel.cv(0.1, DEFAULT_Q0_BASE, 1e-4)
    with pytest.raises(EstimatorError, match=r"\[0, 1\]"):
        kf_update(kf_init(0.5, 0.0, P0), model, 1.2)


def test_nis_is_chi_square_on_model_generated_data():
    """On data drawn from the model itself the mean NIS is close to one."""
    rng = np.random.default_rng(3)
    Q = np.diag([1e-6, 1e-6])
    model = KfModel.cv(0.1, Q, 1e-4)
    values = []
    for _ in range(200):
        x = rng.multivariate_normal([0.5, 0.0], P0)
        state = kf_init(0.5, 0.0, P0)
        for _ in range(50):
            x = model.A @ x + rng.multivariate_normal([0.0, 0.0], Q)
            y = x[0] + rng.normal(0.0, np.sqrt(model.R))
            state, nu, S = kf_update(kf_predict(state, model), model, y)
            values.append(nu**2 / S)

    assert np.mean(values) == pytest.approx(1.0, abs=0.06)


def test_model_validation():
    """Models reject a bad step, a non-PSD Q and a non-positive R."""
    with pytest.raises(EstimatorError, match="dt must be positive"):
        KfModel.cv(0.0, DEFAULT_Q0_BASE, 1e-4)
    with pytest.raises(EstimatorError, match="positive semi-definite"):
        KfModel.cv(0.1, np.diag([1e-6, -1e-3]), 1e-4)
    with pytest.raises(EstimatorError, match="R must be positive"):
        KfModel.cv(0.1, DEFAULT_Q0_BASE, 0.0)
    with pytest.raises(EstimatorError, match="initial progress"):
        kf_init(1.5, 0.0, P0)


def test_scale_covariances_divides_by_squared_length():
    """Covariances scale with 1/L^2 and L is floored at L_min."""
    Q, R = scale_covariances(0.5, 0.007)

    np.testing.assert_allclose(Q, DEFAULT_Q0_BASE / 0.25)
    assert R == pytest.approx(0.007**2 / 0.25)

    Q_short, R_short = scale_covariances(0.001, 0.007)
    assert R_short == pytest.approx(0.007**2 / 0.02**2)
    np.testing.assert_allclose(Q_short, DEFAULT_Q0_BASE / 0.02**2)

    with pytest.raises(EstimatorError, match="task length"):
        scale_covariances(0.0, 0.007)


def test_adapt_process_noise_clamps_the_factor():
    Q = np.eye(2)
    np.testing.assert_allclose(adapt_process_noise(Q, 2.0), 2.0 * Q)
    np.testing.assert_allclose(adapt_process_noise(Q, 0.01), 0.5 * Q)
    np.testing.assert_allclose(adapt_process_noise(Q, 40.0), 4.0 * Q)


@pytest.mark.parametrize("variant", list(KfVariant))
def test_dropout_covariance_matches_repeated_prediction(variant):
    """The closed form agrees with D explicit prediction steps."""
    Q = np.array([[2e-6, 1e-7], [1e-7, 5e-5]])
    model = KfModel.for_variant(variant, 0.1, Q, 1e-4)
    P = np.array([[3e-4, 2e-5], [2e-5, 1e-4]])

    current = P.copy()
    for D in range(8):
        np.testing.assert_allclose(dropout_covariance(P, model, D), current, rtol=1e-12)
        current = model.A @ current @ model.A.T + model.Q


def test_dropout_covariance_rejects_negative_outage():
    model = KfModel.cv(0.1, DEFAULT_Q0_BASE, 1e-4)
    with pytest.raises(EstimatorError, match="non-negative"):
        dropout_covariance(P0, model, -1)


@pytest.mark.parametrize("variant", list(KfVariant))
@pytest.mark.parametrize("gamma", [3e-4, 1e-3, 1e-2])
def test_max_informative_outage_matches_linear_scan(variant, gamma):
    Q, _ = scale_covariances(0.4, 0.007)
    model = KfModel.for_variant(variant, 0.1, Q, 1e-4)

    expected = _scan_outage(P0, model, gamma, cap=2000)

    assert max_informative_outage(P0, model, gamma, cap=2000) == expected


def test_max_informative_outage_edge_cases():
    """Already uninformative gives None; a trace that never grows gives the cap."""
    model = KfModel.cv(0.1, DEFAULT_Q0_BASE, 1e-4)
    assert max_informative_outage(np.eye(2), model, 0.01) is None

    frozen = KfModel.cv(0.1, np.zeros((2, 2)), 1e-4)
    assert max_informative_outage(np.diag([1e-4, 0.0]), frozen, 0.01, cap=50) == 50
