"""Tests for scenario loading, overrides and validation."""

from pathlib import Path

import pytest

from taskwarden.conf import (
    SEED_ENV,
    apply_overrides,
    load_scenario,
    scenario_from_dict,
    shipped_scenarios,
)
from taskwarden.exceptions import ConfigError
from taskwarden.scenario import BiasProfile, DetectorMode, FaultKind

MINIMAL = """\
[scenario]
name = "tiny"
steps = 20

[team]
robot_starts = [[0.1, 0.1], [0.9, 0.1]]
task_goals = [[0.5, 0.8]]
specialization = [[1], [1]]
"""


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "scenario.toml"
    path.write_text(text, encoding="utf-8")
    return path


def _line_of(text: str, needle: str) -> int:
    return next(i for i, line in enumerate(text.splitlines(), 1) if needle in line)


def test_every_shipped_scenario_loads():
    names = set(shipped_scenarios())
    assert names == {"nominal", "noise", "bias", "dropout", "abandonment"}
    for name in names:
        config = load_scenario(name)
        assert config.name == name
        assert config.n_robots == 4
        assert config.n_tasks == 3


def test_shipped_fault_scenarios_match_their_description():
    noise = load_scenario("noise")
    assert noise.faults[0].kind is FaultKind.NOISE_INCREASE
    assert (noise.faults[0].robot, noise.faults[0].start_step) == (2, 25)

    bias = load_scenario("bias")
    assert bias.faults[0].kind is FaultKind.VELOCITY_SLIP_BIAS
    assert bias.faults[0].profile is BiasProfile.OFFSET
    assert (bias.faults[0].robot, bias.faults[0].start_step) == (1, 20)
    assert bias.estimator.adaptive_q is False


def test_minimal_file_uses_defaults(tmp_path):
    config = load_scenario(_write(tmp_path, MINIMAL))

    assert config.steps == 20
    assert config.dt == 0.1
    assert config.detector.alpha == 0.05
    assert config.detector_mode is DetectorMode.PROGRESS
    assert config.faults == ()


def test_invalid_value_reports_file_and_line(tmp_path):
    """A value outside its range names the file and the offending line."""
    text = MINIMAL + "\n[detector]\nwindow = 10\nalpha = 2.0\n"
    path = _write(tmp_path, text)

    with pytest.raises(ConfigError) as exc_info:
        load_scenario(path)

    message = str(exc_info.value)
    assert f"{path}:{_line_of(text, 'alpha = 2.0')}:" in message
    assert "[detector]" in message
    assert "alpha" in message


def test_unknown_key_is_rejected_with_its_line(tmp_path):
    text = MINIMAL + "\n[detector]\nalpah = 0.01\n"
    path = _write(tmp_path, text)

    with pytest.raises(ConfigError, match="unknown key detector.alpah") as exc_info:
        load_scenario(path)

    assert f":{_line_of(text, 'alpah')}:" in str(exc_info.value)


def test_wrong_scalar_type_is_rejected(tmp_path):
    text = MINIMAL + '\n[detector]\nwindow = "wide"\n'

    with pytest.raises(ConfigError, match="detector.window must be an integer"):
        load_scenario(_write(tmp_path, text))


def test_unknown_table_and_missing_team(tmp_path):
    with pytest.raises(ConfigError, match="unknown table"):
        load_scenario(_write(tmp_path, MINIMAL + "\n[metrics]\nx = 1\n"))
    with pytest.raises(ConfigError, match="missing \\[team\\]"):
        load_scenario(_write(tmp_path, '[scenario]\nname = "x"\n'))


def test_invalid_toml_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_scenario(_write(tmp_path, "[scenario\n"))
    with pytest.raises(ConfigError, match="not found"):
        load_scenario(tmp_path / "absent.toml")


def test_fault_out_of_team_is_rejected(tmp_path):
    text = MINIMAL + (
        '\n[[faults]]\nkind = "noise_increase"\nrobot = 7\n'
        "start_step = 3\nmagnitude = 0.01\n"
    )

    with pytest.raises(ConfigError, match="fault targets robot 7"):
        load_scenario(_write(tmp_path, text))


def test_overrides_reach_tables_and_fault_entries():
    config = load_scenario(
        "noise",
        ["detector.alpha=0.01", "faults.0.magnitude=0.02", "scenario.steps=50"],
    )

    assert config.detector.alpha == 0.01
    assert config.faults[0].magnitude == 0.02
    assert config.steps == 50


def test_override_errors():
    with pytest.raises(ConfigError, match="key.path=value"):
        apply_overrides({}, ["detector.alpha"])
    with pytest.raises(ConfigError, match="no list entry"):
        apply_overrides({"faults": []}, ["faults.3.magnitude=1"])


def test_override_values_parse_as_toml_literals():
    data = apply_overrides({}, ["a.b=3", "a.c=true", "a.d=[1, 2]", "a.e=plain"])

    assert data == {"a": {"b": 3, "c": True, "d": [1, 2], "e": "plain"}}


def test_seed_precedence(monkeypatch, tmp_path):
    """File, then environment, then the explicit seed."""
    path = _write(tmp_path, MINIMAL.replace("steps = 20", "steps = 20\nseed = 3"))
    assert load_scenario(path).seed == 3

    monkeypatch.setenv(SEED_ENV, "42")
    assert load_scenario(path).seed == 42
    assert load_scenario(path, seed=7).seed == 7

    monkeypatch.setenv(SEED_ENV, "abc")
    with pytest.raises(ConfigError, match=SEED_ENV):
        load_scenario(path)


def test_to_dict_round_trips():
    for name in shipped_scenarios():
        config = load_scenario(name)
        assert scenario_from_dict(config.to_dict()) == config
