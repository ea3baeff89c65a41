"""Tests for run metrics and Monte-Carlo sweeps."""

import numpy as np
import pytest

from taskwarden.conf import load_scenario
from taskwarden.detector import HealthLabel
from taskwarden.exceptions import ConfigError, MetricsError
from taskwarden.metrics import (
    churn_series,
    completion_summary,
    detection_delay,
    detection_scores,
    false_alarm_rate,
    fault_type_summary,
    lag1_autocorrelation,
    nis_stats,
    roc_and_accuracy_sweep,
    roc_curve,
    run_accuracy,
    timing_summary,
)
from taskwarden.runlog import RunLog, StepRecord
from taskwarden.scenario import DetectorMode, FaultKind
from taskwarden.simulator import run_scenario


@pytest.fixture(scope="module")
def noise_log():
    return run_scenario(load_scenario("noise").replace(steps=80))


@pytest.fixture(scope="module")
def oracle_noise_log():
    config = load_scenario("noise").replace(detector_mode=DetectorMode.ORACLE, steps=40)
    return run_scenario(config)


def test_roc_of_separable_scores_is_perfect():
    curve = roc_curve([3.0, 4.0, 5.0], [0.5, 1.0, 2.0])

    assert curve.auc == pytest.approx(1.0)
    assert curve.points[0] == (0.0, 0.0)
    assert curve.points[-1] == (1.0, 1.0)
    assert (0.0, 1.0) in curve.points


def test_roc_of_identical_scores_is_the_diagonal():
    curve = roc_curve([1.0, 1.0], [1.0, 1.0, 1.0])

    assert curve.auc == pytest.approx(0.5)
    assert curve.points == ((0.0, 0.0), (1.0, 1.0))


def test_roc_of_random_scores_is_near_chance():
    rng = np.random.default_rng(3)
    curve = roc_curve(rng.normal(size=2000), rng.normal(size=2000))

    assert curve.auc == pytest.approx(0.5, abs=0.05)
    fprs = [f for f, _ in curve.points]
    assert fprs == sorted(fprs)


def test_roc_needs_both_classes():
    with pytest.raises(MetricsError, match="positive and one negative"):
        roc_curve([1.0], [])


def test_lag1_autocorrelation():
    rng = np.random.default_rng(0)

    assert abs(lag1_autocorrelation(rng.normal(size=5000))) < 0.05
    assert lag1_autocorrelation(np.cumsum(rng.normal(size=500))) > 0.8
    assert lag1_autocorrelation([1.0, 1.0, 1.0]) == 0.0
    with pytest.raises(MetricsError, match="three"):
        lag1_autocorrelation([1.0, 2.0])


def test_delay_and_nis_agree_with_the_summary(noise_log):
    summary = {r.robot: r for r in noise_log.summary.robots}

    faulty = summary[2]
    delay = detection_delay(noise_log, 2)
    if faulty.fault_det_step is not None and faulty.fault_det_step >= 25:
        assert delay == faulty.fault_det_step - 25

    for robot, row in summary.items():
        if row.nis_mean is None or row.faulty:
            continue
        mean, std = nis_stats(noise_log, robot)
        assert mean == pytest.approx(row.nis_mean)
        assert std == pytest.approx(row.nis_std)


def test_oracle_detection_is_immediate_and_accurate(oracle_noise_log):
    assert detection_delay(oracle_noise_log, 2) == 0
    assert run_accuracy(oracle_noise_log, 2)


def test_metrics_reject_the_wrong_robot(oracle_noise_log):
    with pytest.raises(MetricsError, match="no fault was injected"):
        detection_delay(oracle_noise_log, 0)
    with pytest.raises(MetricsError, match="healthy robots only"):
        nis_stats(oracle_noise_log, 2)


def test_detection_scores_read_the_windowed_nis(noise_log):
    values = [
        r.windowed_nis[2]
        for r in noise_log.records
        if r.step >= 25 and r.windowed_nis[2] is not None
    ]

    assert detection_scores(noise_log, 2, 25) == max(values, default=0.0)
    assert detection_scores(noise_log, 2, 10_000) == 0.0


def test_false_alarm_rate_is_a_fraction(noise_log, oracle_noise_log):
    rate = false_alarm_rate([noise_log])

    assert 0.0 <= rate <= 1.0
    assert false_alarm_rate([oracle_noise_log]) == 0.0
    assert false_alarm_rate([]) == 0.0


def test_churn_completion_and_timing(noise_log):
    churn = churn_series(noise_log)
    assert churn.solve_count == noise_log.summary.reallocations
    assert len(churn.values) == churn.solve_count - 1
    assert churn.total == pytest.approx(noise_log.summary.total_churn)

    completion = completion_summary(noise_log)
    assert completion["tasks"] == 3
    assert 0.0 <= completion["completion_rate"] <= 1.0
    assert completion["reallocations"] == noise_log.summary.reallocations

    timing = timing_summary(noise_log)
    assert timing["qp_max_s"] >= timing["qp_mean_s"] > 0.0


def test_sweep_reports_every_magnitude_in_order():
    config = load_scenario("noise").replace(detector_mode=DetectorMode.ORACLE, steps=35)

    result = roc_and_accuracy_sweep(config, "noise_increase", [0.02, 0.01], 2)

    assert result.kind is FaultKind.NOISE_INCREASE
    assert result.robot == 2
    assert result.magnitudes == [0.02, 0.01]
    assert result.accuracy == [1.0, 1.0]
    assert [p.detections for p in result.points] == [2, 2]
    assert [p.median_delay for p in result.points] == [0.0, 0.0]
    assert result.auc is not None
    assert result.roc_points[0] == (0.0, 0.0)


def test_sweep_is_the_same_in_worker_processes():
    config = load_scenario("noise").replace(detector_mode=DetectorMode.ORACLE, steps=30)

    serial = roc_and_accuracy_sweep(config, "noise_increase", [0.02], 2)
    parallel = roc_and_accuracy_sweep(config, "noise_increase", [0.02], 2, jobs=2)

    assert parallel == serial


def test_sweep_edge_cases():
    config = load_scenario("noise")

    empty = roc_and_accuracy_sweep(config, FaultKind.NOISE_INCREASE, [], 5)
    assert empty.points == ()
    assert empty.auc is None
    with pytest.raises(MetricsError, match="no velocity_slip_bias fault"):
        roc_and_accuracy_sweep(config, FaultKind.VELOCITY_SLIP_BIAS, [0.01], 1)


def test_fault_type_summary_in_oracle_mode():
    config = load_scenario("abandonment").replace(
        detector_mode=DetectorMode.ORACLE,
        steps=40,
    )

    row = fault_type_summary(config, 2)

    assert row.kind is FaultKind.TASK_ABANDONMENT
    assert (row.runs, row.detection_rate, row.median_delay) == (2, 1.0, 0.0)
    assert row.false_alarm_rate == 0.0
    assert row.to_dict()["kind"] == "task_abandonment"
    with pytest.raises(MetricsError, match="injects no fault"):
        fault_type_summary(load_scenario("nominal"), 1)


def _labelled_log(labels_of_robot_2, onset):
    """A noise-scenario log whose robot 2 carries the given labels."""
    config = load_scenario("noise")
    H = HealthLabel.HEALTHY
    records = [
        StepRecord(
            step=step,
            positions=((0.0, 0.0),) * 4,
            assignment=(1, 0, 2, None),
            true_progress=(None,) * 4,
            measured_progress=(None,) * 4,
            dropped=(False,) * 4,
            nis=(None,) * 4,
            innovation=(None,) * 4,
            windowed_nis=(None,) * 4,
            trace_p=(None,) * 4,
            stream_age=(step + 1,) * 4,
            labels=(H, H, label, H),
            confidence=(0.0,) * 4,
            alpha=((0.0,) * 3,) * 4,
            reallocated=step == 0,
            churn=None,
            slack=0.0,
            qp_iterations=1,
        )
        for step, label in enumerate(labels_of_robot_2)
    ]
    return RunLog(config=config, records=records, fault_starts=(onset,))


def test_fault_latched_before_onset_is_not_a_detection():
    H, F = HealthLabel.HEALTHY, HealthLabel.FAULT
    log = _labelled_log([H] * 5 + [F] * 25, onset=20)

    assert detection_delay(log, 2) is None
    assert not run_accuracy(log, 2)


def test_fault_after_onset_is_an_accurate_detection():
    H, F = HealthLabel.HEALTHY, HealthLabel.FAULT
    log = _labelled_log([H] * 27 + [F] * 3, onset=20)

    assert detection_delay(log, 2) == 7
    assert run_accuracy(log, 2)


def test_sweeps_need_at_least_one_run():
    config = load_scenario("noise")

    with pytest.raises(ConfigError, match="runs must be at least 1"):
        roc_and_accuracy_sweep(config, FaultKind.NOISE_INCREASE, [0.01], 0)
    with pytest.raises(ConfigError, match="jobs must be at least 1"):
        roc_and_accuracy_sweep(config, FaultKind.NOISE_INCREASE, [0.01], 1, jobs=0)
    with pytest.raises(ConfigError, match="runs must be at least 1"):
        fault_type_summary(config, 0)
