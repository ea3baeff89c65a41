"""Scenario loader for TaskWarden.

Reads a scenario from a TOML file with these tables:

    [scenario]   name, dt, steps, seed, sigma_xy, completion_radius, detector_mode
    [team]       robot_starts, task_goals, specialization, cost terms
    [policy]     health penalties, churn weight, re-solve schedule
    [estimator]  filter variant and covariances
    [detector]   NIS test, gates and debounce counts
    [naive]      thresholds of the naive baseline
    [[faults]]   one table per injected fault

Load order: file, then `key.path=value` overrides, then environment
overrides, then validation into a `ScenarioConfig`.

Environment overrides:
    TASKWARDEN_SEED - master seed of the run

Shipped scenarios live in the package (`taskwarden/scenarios/*.toml`) and can
be referred to by name.
"""

import copy
import os
import re
import tomllib
from dataclasses import MISSING, fields
from importlib.resources import files
from pathlib import Path
from typing import Any

from taskwarden.allocator import HealthPolicy
from taskwarden.detector import DetectorConfig, NaiveConfig
from taskwarden.exceptions import ConfigError, DetectorError
from taskwarden.scenario import (
    EstimatorConfig,
    FaultSpec,
    ScenarioConfig,
    TeamConfig,
)

__all__ = [
    "apply_overrides",
    "load_scenario",
    "resolve_scenario_path",
    "scenario_from_dict",
    "shipped_scenarios",
]

SEED_ENV = "TASKWARDEN_SEED"

_SECTIONS = {
    "team": TeamConfig,
    "policy": HealthPolicy,
    "estimator": EstimatorConfig,
    "detector": DetectorConfig,
    "naive": NaiveConfig,
}
_SCENARIO_KEYS = {
    "name",
    "dt",
    "steps",
    "seed",
    "sigma_xy",
    "completion_radius",
    "detector_mode",
}
_HEADER_RE = re.compile(r"^\s*(\[\[?)\s*([\w.-]+)\s*\]\]?")
_KEY_RE = re.compile(r"^\s*([\w-]+)\s*=")


def shipped_scenarios() -> dict[str, Path]:
    """Map of shipped scenario names to their files."""
    root = files("taskwarden") / "scenarios"
    return {
        Path(entry.name).stem: Path(str(entry))
        for entry in root.iterdir()
        if entry.name.endswith(".toml")
    }


def resolve_scenario_path(name_or_path: str | Path) -> Path:
    """Accept a file path or the name of a shipped scenario."""
    path = Path(name_or_path)
    if path.exists():
        return path
    shipped = shipped_scenarios()
    if str(name_or_path) in shipped:
        return shipped[str(name_or_path)]
    msg = (
        f"Scenario {str(name_or_path)!r} not found. Give a TOML path or one of: "
        f"{', '.join(sorted(shipped))}."
    )
    raise ConfigError(msg)


def _key_lines(text: str) -> dict[str, int]:
    """Line number of every `section.key` (faults as `faults.<i>.key`)."""
    lines: dict[str, int] = {}
    section = ""
    fault_index = -1
    for number, line in enumerate(text.splitlines(), start=1):
        if header := _HEADER_RE.match(line):
            name = header.group(2)
            if header.group(1) == "[[":
                fault_index += 1
                section = f"{name}.{fault_index}"
            else:
                section = name
            lines.setdefault(section, number)
            continue
        if key := _KEY_RE.match(line):
            lines[f"{section}.{key.group(1)}" if section else key.group(1)] = number
    return lines


def _parse_value(raw: str) -> Any:
    """Parse an override value as a TOML literal, falling back to a string."""
    try:
        return tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(data: dict[str, Any], overrides) -> dict[str, Any]:
    """Return a copy of `data` with `key.path=value` overrides applied.

    Examples:
        'detector.alpha=0.01'
        'faults.0.magnitude=0.02'
        'team.u_max=0.1'

    """
    data = copy.deepcopy(data)
    for override in overrides or ():
        if "=" not in override:
            msg = f"Override {override!r} must look like key.path=value."
            raise ConfigError(msg)
        path, raw = override.split("=", 1)
        parts = path.strip().split(".")
        node: Any = data
        for part in parts[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(part)]
                except (ValueError, IndexError) as exc:
                    msg = f"Override {path!r}: no list entry {part!r}."
                    raise ConfigError(msg) from exc
            else:
                node = node.setdefault(part, {})
        if not isinstance(node, dict):
            msg = f"Override {path!r} does not name a table key."
            raise ConfigError(msg)
        node[parts[-1]] = _parse_value(raw.strip())
    return data


def _coerce(cls, section: str, values: dict[str, Any]) -> dict[str, Any]:
    """Reject unknown keys and check scalar types against field defaults."""
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        msg = f"unknown key {section}.{unknown[0]}"
        raise ConfigError(msg)
    out = dict(values)
    for name, value in values.items():
        default = known[name].default
        if default is MISSING:
            continue
        key = f"{section}.{name}"
        if isinstance(default, bool):
            if not isinstance(value, bool):
                msg = f"{key} must be true or false, got {value!r}."
                raise ConfigError(msg)
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                msg = f"{key} must be an integer, got {value!r}."
                raise ConfigError(msg)
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                msg = f"{key} must be a number, got {value!r}."
                raise ConfigError(msg)
            out[name] = float(value)
    return out


def _locate(message: str, section: str, lines: dict[str, int]) -> int | None:
    """Best-effort line for an error: the first key of `section` it mentions."""
    for key, number in lines.items():
        if key.startswith(f"{section}.") and re.search(
            rf"\b{re.escape(key.rsplit('.', 1)[1])}\b",
            message,
        ):
            return number
    return lines.get(section)


def _build(cls, section: str, values, lines, source: str):
    if not isinstance(values, dict):
        msg = f"{source}: [{section}] must be a table."
        raise ConfigError(msg)
    try:
        return cls(**_coerce(cls, section, values))
    except (ConfigError, DetectorError, TypeError) as exc:
        line = _locate(str(exc), section, lines)
        where = f"{source}:{line}" if line else source
        msg = f"{where}: [{section}] {exc}"
        raise ConfigError(msg) from exc


def scenario_from_dict(
    data: dict[str, Any],
    *,
    source: str = "<config>",
    text: str = "",
) -> ScenarioConfig:
    """Validate a nested dict (TOML layout) into a `ScenarioConfig`."""
    lines = _key_lines(text)
    unknown = sorted(set(data) - {"scenario", "faults", *_SECTIONS})
    if unknown:
        msg = f"{source}: unknown table [{unknown[0]}]."
        raise ConfigError(msg)
    if "team" not in data:
        msg = f"{source}: missing [team] table."
        raise ConfigError(msg)

    top = dict(data.get("scenario", {}))
    bad = sorted(set(top) - _SCENARIO_KEYS)
    if bad:
        line = lines.get(f"scenario.{bad[0]}")
        msg = f"{source}{f':{line}' if line else ''}: unknown key scenario.{bad[0]}"
        raise ConfigError(msg)

    sections = {
        name: _build(cls, name, data.get(name, {}), lines, source)
        for name, cls in _SECTIONS.items()
    }
    faults = []
    for index, raw in enumerate(data.get("faults", [])):
        faults.append(_build(FaultSpec, f"faults.{index}", raw, lines, source))

    try:
        top = _coerce(ScenarioConfig, "scenario", top)
        return ScenarioConfig(**top, **sections, faults=tuple(faults))
    except ConfigError as exc:
        line = _locate(str(exc), "scenario", lines)
        where = f"{source}:{line}" if line else source
        msg = f"{where}: {exc}"
        raise ConfigError(msg) from exc


def load_scenario(
    path: str | Path,
    overrides=None,
    *,
    seed: int | None = None,
) -> ScenarioConfig:
    """Load, override and validate a scenario.

    Args:
        path: a TOML file or the name of a shipped scenario.
        overrides: `key.path=value` strings applied after the file.
        seed: explicit seed, applied after the environment override.

    Returns:
        The validated scenario.

    Raises:
        ConfigError: on unreadable files, TOML syntax errors, unknown keys or
            values that violate their type invariants.

    """
    path = resolve_scenario_path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        msg = f"Cannot read scenario {path}: {exc}"
        raise ConfigError(msg) from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = f"{path}: invalid TOML: {exc}"
        raise ConfigError(msg) from exc

    data = apply_overrides(data, overrides)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            data.setdefault("scenario", {})["seed"] = int(env_seed)
        except ValueError as exc:
            msg = f"{SEED_ENV} must be an integer, got {env_seed!r}."
            raise ConfigError(msg) from exc
    if seed is not None:
        data.setdefault("scenario", {})["seed"] = int(seed)

    return scenario_from_dict(data, source=str(path), text=text)
