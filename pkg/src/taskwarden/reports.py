"""CSV and manifest writers for run and sweep reports.

Every writer refuses to replace an existing file unless `force` is set.
Missing values are written as empty cells and floats with `repr`, so the
readers recover the exact numbers.
"""

import csv
import hashlib
import json
import platform
from collections.abc import Iterable, Sequence
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

import click

from taskwarden.exceptions import OutputExistsError
from taskwarden.metrics import RocCurve, SweepResult
from taskwarden.runlog import RobotSummary, RunLog
from taskwarden.scenario import ScenarioConfig
from taskwarden.utils import stable_hash

__all__ = [
    "STEP_COLUMNS",
    "SUMMARY_COLUMNS",
    "SWEEP_COLUMNS",
    "check_targets",
    "read_summary_csv",
    "read_sweep_csv",
    "write_fault_types_csv",
    "write_manifest",
    "write_roc_csv",
    "write_steps_csv",
    "write_summary_csv",
    "write_sweep_csv",
    "write_timing_csv",
]

STEP_COLUMNS = (
    "step",
    "robot",
    "x",
    "y",
    "task",
    "true_progress",
    "measured_progress",
    "dropped",
    "nis",
    "innovation",
    "windowed_nis",
    "trace_p",
    "stream_age",
    "label",
    "confidence",
    "reallocated",
    "churn",
    "slack",
    "qp_iterations",
)
SUMMARY_COLUMNS = (
    "robot",
    "faulty",
    "task_before",
    "task_after",
    "fault_init_step",
    "fault_det_step",
    "completed",
    "nis_mean",
    "nis_std",
)
SWEEP_COLUMNS = (
    "kind",
    "robot",
    "magnitude",
    "runs",
    "detections",
    "accuracy",
    "median_delay",
    "auc",
)
_PACKAGES = ("task-warden", "numpy", "scipy", "click")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(text: str) -> Any:
    if text == "":
        return None
    if text in {"true", "false"}:
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _check_target(path: Path, *, force: bool) -> Path:
    if path.exists() and not force:
        msg = f"{path} already exists; pass --force to overwrite it."
        raise OutputExistsError(msg)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def check_targets(paths: Iterable[str | Path], *, force: bool = False) -> list[Path]:
    """Fail before any file is written if one of `paths` already exists."""
    return [_check_target(Path(p), force=force) for p in paths]


def _write_rows(
    path: str | Path,
    columns: Sequence[str],
    rows: Iterable[dict[str, Any]],
    *,
    force: bool,
) -> Path:
    path = _check_target(Path(path), force=force)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row.get(key)) for key in columns})
    return path


def _read_rows(path: str | Path) -> list[dict[str, Any]]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return [
            {key: _parse_cell(value) for key, value in row.items()}
            for row in csv.DictReader(handle)
        ]


def write_steps_csv(log: RunLog, path: str | Path, *, force: bool = False) -> Path:
    """One row per step and robot. Timings are left to `timing.csv`."""

    def rows():
        for r in log.records:
            for i, (x, y) in enumerate(r.positions):
                yield {
                    "step": r.step,
                    "robot": i,
                    "x": x,
                    "y": y,
                    "task": r.assignment[i],
                    "true_progress": r.true_progress[i],
                    "measured_progress": r.measured_progress[i],
                    "dropped": r.dropped[i],
                    "nis": r.nis[i],
                    "innovation": r.innovation[i],
                    "windowed_nis": r.windowed_nis[i],
                    "trace_p": r.trace_p[i],
                    "stream_age": r.stream_age[i],
                    "label": str(r.labels[i]),
                    "confidence": r.confidence[i],
                    "reallocated": r.reallocated,
                    "churn": r.churn,
                    "slack": r.slack,
                    "qp_iterations": r.qp_iterations,
                }

    return _write_rows(path, STEP_COLUMNS, rows(), force=force)


def write_timing_csv(log: RunLog, path: str | Path, *, force: bool = False) -> Path:
    rows = (
        {"step": r.step, "detector_time": r.detector_time, "qp_time": r.qp_time}
        for r in log.records
    )
    return _write_rows(path, ("step", "detector_time", "qp_time"), rows, force=force)


def write_summary_csv(
    robots: Sequence[RobotSummary],
    path: str | Path,
    *,
    force: bool = False,
    scenario: str | None = None,
) -> Path:
    """Per-robot before/after assignment, fault steps and NIS statistics.

    With `scenario` set, a leading `scenario` column is added so several
    runs can share one table.
    """
    columns = (("scenario",) if scenario is not None else ()) + SUMMARY_COLUMNS
    rows = ({"scenario": scenario, **vars(r)} for r in robots)
    return _write_rows(path, columns, rows, force=force)


def read_summary_csv(path: str | Path) -> list[RobotSummary]:
    return [
        RobotSummary(**{key: row[key] for key in SUMMARY_COLUMNS})
        for row in _read_rows(path)
    ]


def write_sweep_csv(
    result: SweepResult,
    path: str | Path,
    *,
    force: bool = False,
) -> Path:
    rows = (
        {
            "kind": str(result.kind),
            "robot": result.robot,
            "magnitude": p.magnitude,
            "runs": p.runs,
            "detections": p.detections,
            "accuracy": p.accuracy,
            "median_delay": p.median_delay,
            "auc": p.roc.auc,
        }
        for p in result.points
    )
    return _write_rows(path, SWEEP_COLUMNS, rows, force=force)


def read_sweep_csv(path: str | Path) -> list[dict[str, Any]]:
    return _read_rows(path)


def write_roc_csv(
    result: SweepResult,
    path: str | Path,
    *,
    force: bool = False,
) -> Path:
    """ROC points per magnitude, then the pooled curve under `pooled`."""
    curves: list[tuple[str, RocCurve]] = [
        (repr(p.magnitude), p.roc) for p in result.points
    ]
    if result.roc is not None:
        curves.append(("pooled", result.roc))
    rows = (
        {"curve": name, "fpr": fpr, "tpr": tpr, "threshold": threshold}
        for name, curve in curves
        for (fpr, tpr), threshold in zip(curve.points, curve.thresholds, strict=True)
    )
    return _write_rows(path, ("curve", "fpr", "tpr", "threshold"), rows, force=force)


def write_fault_types_csv(
    rows: Sequence[dict[str, Any]],
    path: str | Path,
    *,
    force: bool = False,
) -> Path:
    columns = (
        "kind",
        "scenario",
        "runs",
        "detection_rate",
        "median_delay",
        "false_alarm_rate",
    )
    return _write_rows(path, columns, rows, force=force)


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for package in _PACKAGES:
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def write_manifest(
    config: ScenarioConfig,
    files: Sequence[str | Path],
    path: str | Path,
    *,
    force: bool = False,
) -> Path:
    """Write `manifest.json`: config hash, seed, versions and file digests."""
    path = _check_target(Path(path), force=force)
    manifest = {
        "scenario": config.name,
        "seed": config.seed,
        "config_sha256": stable_hash(config.to_dict()),
        "versions": _versions(),
        "files": {Path(f).name: _file_digest(Path(f)) for f in files},
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    click.echo(f"Wrote {path}")
    return path
