"""Command-line interface for TaskWarden.

Subcommands
-----------
- run: Simulate one scenario and write per-step, summary and timing CSVs
  plus a manifest.
- sweep: Monte-Carlo accuracy and ROC over a range of fault magnitudes.
- tables: Regenerate the summary, sweep and fault-type tables from the
  shipped scenarios.
- validate: Check scenario files without running them.
- calibrate: Run nominal seeds and report NIS statistics and a suggested
  process-noise scale.

Configured as a console script via:

    [project.scripts]
    taskwarden = "taskwarden.cli:main"
"""

import argparse
import logging
from dataclasses import replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import click
import numpy as np

from taskwarden.conf import load_scenario, shipped_scenarios
from taskwarden.exceptions import ConfigError, OutputExistsError, TaskWardenError
from taskwarden.metrics import (
    fault_type_summary,
    lag1_autocorrelation,
    roc_and_accuracy_sweep,
)
from taskwarden.reports import (
    check_targets,
    write_fault_types_csv,
    write_manifest,
    write_roc_csv,
    write_steps_csv,
    write_summary_csv,
    write_sweep_csv,
    write_timing_csv,
)
from taskwarden.runlog import healthy_nis_samples
from taskwarden.scenario import DetectorMode, FaultKind
from taskwarden.simulator import run_scenario

NOISE_MAGNITUDES = tuple(round(0.007 + 0.0004 * i, 4) for i in range(16))
BIAS_MAGNITUDES = tuple(round(0.004 * i, 3) for i in range(12))
_SWEEP_RUNS = {FaultKind.NOISE_INCREASE: 30, FaultKind.VELOCITY_SLIP_BIAS: 50}


def _add_common(parser: argparse.ArgumentParser, *, output: bool = True) -> None:
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config value by dot path (repeatable): detector.alpha=0.01.",
    )
    parser.add_argument("--seed", type=int, help="Master seed of the run.")
    if output:
        parser.add_argument(
            "-o",
            "--output-dir",
            type=Path,
            default=Path(),
            help="Directory for the report files (default: current directory).",
        )
        parser.add_argument(
            "--force",
            action="store_true",
            help="Overwrite existing report files.",
        )


def _magnitudes(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        msg = f"magnitudes must be comma-separated numbers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from exc


def _build_parser() -> argparse.ArgumentParser:
    """Construct the top-level argument parser (no parsing yet)."""
    parser = argparse.ArgumentParser(
        prog="taskwarden",
        description="Progress-based fault detection and health-aware task allocation.",
    )
    parser.add_argument(
        "-V",
        "--version",
        action="store_true",
        help="Print version and exit.",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Log progress (-v) or debug detail (-vv).",
    )

    subparsers = parser.add_subparsers(
        dest="command",
        required=False,
        metavar="{run,sweep,tables,validate,calibrate}",
    )

    # ---- run ------------------------------------------------------------

    run = subparsers.add_parser(
        "run",
        help="Simulate one scenario and write its reports.",
        description=(
            "Run a scenario file (or the name of a shipped scenario) and write "
            "steps.csv, summary.csv, timing.csv and manifest.json."
        ),
    )
    run.add_argument("scenario", help="Scenario TOML path or shipped scenario name.")
    _add_common(run)
    run.add_argument(
        "--dump-dir",
        type=Path,
        help="Write the QP to this directory if an allocation solve fails.",
    )

    # ---- sweep ----------------------------------------------------------

    sweep = subparsers.add_parser(
        "sweep",
        help="Accuracy and ROC over fault magnitudes.",
        description=(
            "Re-run a faulted scenario over a range of fault magnitudes and "
            "seeds, and write sweep.csv and roc.csv."
        ),
    )
    sweep.add_argument("scenario", help="Scenario TOML path or shipped scenario name.")
    _add_common(sweep)
    sweep.add_argument(
        "--kind",
        choices=[str(FaultKind.NOISE_INCREASE), str(FaultKind.VELOCITY_SLIP_BIAS)],
        default=str(FaultKind.NOISE_INCREASE),
        help="Fault kind whose magnitude is swept.",
    )
    sweep.add_argument(
        "--magnitudes",
        type=_magnitudes,
        help="Comma-separated magnitudes (default: the kind's standard grid).",
    )
    sweep.add_argument("--runs", type=int, default=30, help="Seeds per magnitude.")
    sweep.add_argument("--jobs", type=int, default=1, help="Worker processes.")

    # ---- tables ---------------------------------------------------------

    tables = subparsers.add_parser(
        "tables",
        help="Regenerate the summary, sweep and fault-type tables.",
        description=(
            "Run the shipped noise and bias scenarios, their magnitude sweeps "
            "and every shipped faulted scenario, and write one CSV per table."
        ),
    )
    _add_common(tables)
    tables.add_argument(
        "--runs",
        type=int,
        help="Seeds per sweep magnitude and fault type (default: 30 noise, 50 bias).",
    )
    tables.add_argument("--jobs", type=int, default=1, help="Worker processes.")

    # ---- validate -------------------------------------------------------

    validate = subparsers.add_parser(
        "validate",
        help="Check scenario files without running them.",
    )
    validate.add_argument("scenarios", nargs="*", help="Scenario paths or names.")
    validate.add_argument(
        "--shipped",
        action="store_true",
        help="Validate every shipped scenario.",
    )
    _add_common(validate, output=False)

    # ---- calibrate ------------------------------------------------------

    calibrate = subparsers.add_parser(
        "calibrate",
        help="Report healthy NIS statistics and a suggested Q scale.",
        description=(
            "Run a fault-free scenario with adaptive Q off and report the mean "
            "and spread of the healthy NIS, the lag-1 innovation whiteness and "
            "the suggested estimator.q_scale."
        ),
    )
    calibrate.add_argument("scenario", help="Scenario TOML path or shipped name.")
    _add_common(calibrate, output=False)
    calibrate.add_argument("--runs", type=int, default=10, help="Seeds to run.")
    return parser


def _parse_args(parser: argparse.ArgumentParser, argv=None) -> argparse.Namespace:
    """Parse CLI args and handle top-level flags that short-circuit (e.g. --version)."""
    args = parser.parse_args(argv)

    if args.version:
        try:
            click.echo(f"taskwarden {version('task-warden')}")
        except PackageNotFoundError:
            click.echo("taskwarden (version unknown)")
        raise SystemExit(0)

    if args.command is None:
        parser.print_help()
        raise SystemExit(2)

    return args


def cmd_run(args: argparse.Namespace) -> None:
    config = load_scenario(args.scenario, args.overrides, seed=args.seed)
    out = args.output_dir
    names = ("steps.csv", "summary.csv", "timing.csv", "manifest.json")
    check_targets((out / name for name in names), force=args.force)
    log = run_scenario(config, dump_dir=args.dump_dir)
    written = [
        write_steps_csv(log, out / "steps.csv", force=args.force),
        write_summary_csv(log.summary.robots, out / "summary.csv", force=args.force),
        write_timing_csv(log, out / "timing.csv", force=args.force),
    ]
    write_manifest(config, written, out / "manifest.json", force=args.force)
    for robot in log.summary.robots:
        click.echo(
            f"robot {robot.robot}: task {robot.task_before} -> {robot.task_after}"
            f"  fault {robot.fault_init_step} detected {robot.fault_det_step}",
        )


def _sweep(config, kind: FaultKind, magnitudes, runs: int, jobs: int, paths, *, force):
    check_targets(paths, force=force)
    result = roc_and_accuracy_sweep(config, kind, magnitudes, runs, jobs=jobs)
    sweep_path, roc_path = paths
    write_sweep_csv(result, sweep_path, force=force)
    write_roc_csv(result, roc_path, force=force)
    for point in result.points:
        click.echo(f"{kind} {point.magnitude:g}: accuracy {100 * point.accuracy:.1f}%")
    if result.auc is not None:
        click.echo(f"pooled AUC {result.auc:.3f}")
    return result


def cmd_sweep(args: argparse.Namespace) -> None:
    kind = FaultKind(args.kind)
    config = load_scenario(args.scenario, args.overrides, seed=args.seed)
    default = NOISE_MAGNITUDES if kind is FaultKind.NOISE_INCREASE else BIAS_MAGNITUDES
    magnitudes = args.magnitudes if args.magnitudes is not None else default
    _sweep(
        config,
        kind,
        magnitudes,
        args.runs,
        args.jobs,
        (args.output_dir / "sweep.csv", args.output_dir / "roc.csv"),
        force=args.force,
    )


def cmd_tables(args: argparse.Namespace) -> None:
    out = args.output_dir
    if args.runs is not None and args.runs < 1:
        msg = f"runs must be at least 1, got {args.runs}."
        raise ConfigError(msg)
    check_targets(
        [
            *(
                out / f"table_{name}_{table}.csv"
                for name in ("noise", "bias")
                for table in ("summary", "sweep", "roc")
            ),
            out / "table_fault_types.csv",
        ],
        force=args.force,
    )
    shipped = {
        name: load_scenario(path, args.overrides, seed=args.seed)
        for name, path in sorted(shipped_scenarios().items())
    }
    for name, kind, magnitudes in (
        ("noise", FaultKind.NOISE_INCREASE, NOISE_MAGNITUDES),
        ("bias", FaultKind.VELOCITY_SLIP_BIAS, BIAS_MAGNITUDES),
    ):
        config = shipped[name]
        log = run_scenario(config)
        write_summary_csv(
            log.summary.robots,
            out / f"table_{name}_summary.csv",
            force=args.force,
            scenario=name,
        )
        runs = args.runs or _SWEEP_RUNS[kind]
        _sweep(
            config,
            kind,
            magnitudes,
            runs,
            args.jobs,
            (out / f"table_{name}_sweep.csv", out / f"table_{name}_roc.csv"),
            force=args.force,
        )

    rows = [
        fault_type_summary(config, args.runs or 30, jobs=args.jobs).to_dict()
        for config in shipped.values()
        if config.faults and config.faults[0].kind is not FaultKind.COMM_DROPOUT
    ]
    path = write_fault_types_csv(rows, out / "table_fault_types.csv", force=args.force)
    click.echo(f"Wrote {path}")


def cmd_validate(args: argparse.Namespace) -> None:
    targets = list(args.scenarios)
    if args.shipped:
        targets += sorted(shipped_scenarios())
    if not targets:
        msg = "Nothing to validate: give scenario paths or --shipped."
        raise ConfigError(msg)
    for target in targets:
        config = load_scenario(target, args.overrides, seed=args.seed)
        click.echo(f"{target}: ok ({config.n_robots} robots, {config.n_tasks} tasks)")


def cmd_calibrate(args: argparse.Namespace) -> None:
    config = load_scenario(args.scenario, args.overrides, seed=args.seed)
    if config.faults:
        msg = f"calibrate needs a fault-free scenario; {config.name!r} injects faults."
        raise ConfigError(msg)
    if config.sigma_xy == 0:
        click.secho(
            "sensor noise is zero: the NIS is degenerate, nothing to calibrate.",
            fg="yellow",
            err=True,
        )
        return
    config = config.replace(
        detector_mode=DetectorMode.NONE,
        estimator=replace(config.estimator, adaptive_q=False),
    )
    nis: list[float] = []
    whiteness: list[float] = []
    window = config.detector.window
    for run in range(args.runs):
        log = run_scenario(config.replace(seed=config.seed + run))
        for robot in range(log.n_robots):
            nis += healthy_nis_samples(log, robot)
            innovations = [
                r.innovation[robot]
                for r in log.records
                if r.innovation[robot] is not None and r.stream_age[robot] > window
            ]
            if len(innovations) > 2:  # noqa: PLR2004
                whiteness.append(lag1_autocorrelation(innovations))
    if len(nis) < 2:  # noqa: PLR2004
        msg = "calibration produced fewer than two NIS samples; lengthen the run."
        raise ConfigError(msg)
    mean = float(np.mean(nis))
    click.echo(f"samples      {len(nis)}")
    click.echo(f"NIS mean     {mean:.4f}")
    click.echo(f"NIS std      {float(np.std(nis, ddof=1)):.4f}")
    if whiteness:
        click.echo(f"lag-1 corr   {float(np.mean(whiteness)):.4f}")
    click.echo(f"suggested estimator.q_scale = {config.estimator.q_scale * mean:.4g}")


_COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "tables": cmd_tables,
    "validate": cmd_validate,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> None:
    """Console script entry point.

    Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
    configuration error and 130 on interrupt.
    """
    parser = _build_parser()
    args = _parse_args(parser, argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        _COMMANDS[args.command](args)
    except (ConfigError, OutputExistsError) as exc:
        click.secho(str(exc), fg="red", err=True)
        raise SystemExit(2) from exc
    except TaskWardenError as exc:
        click.secho(str(exc), fg="red", err=True)
        raise SystemExit(1) from exc
    except KeyboardInterrupt as error:
        # Conventional exit code for SIGINT
        raise SystemExit(130) from error
