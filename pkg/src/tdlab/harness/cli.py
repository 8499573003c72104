"""Command line: ``tdlab verify | run | sweep | report | env``.

Exit codes: 0 success, 1 verification failure (or failed sweep runs), 2 config error.
Output root defaults to ``$TDLAB_OUT`` or ``./runs``.
"""

from __future__ import annotations

import json
import sys

import click

from .config import ConfigError, load_config
from .runner import OUT_ENV

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _config_error(exc: ConfigError):
    click.echo("config error:", err=True)
    for p in exc.problems:
        click.echo(f"  {p}", err=True)
    sys.exit(EXIT_CONFIG)


@click.group()
def main():
    """Gradient interference laboratory for TD and supervised learners."""


@main.command()
@click.option("--quick", is_flag=True, help="Fewer draws and episodes (smoke check).")
@click.option("--draws", default=100, show_default=True, help="Random draws per oracle suite.")
@click.option("--json", "json_out", type=click.Path(dir_okay=False), help="Also write results as JSON.")
def verify(quick, draws, json_out):
    """Run every oracle and identity suite; exit 1 if any check fails."""
    from .verify import run_all
    checks = run_all(draws, quick)
    for c in checks:
        click.echo(c.line())
    failed = [c for c in checks if not c.passed]
    click.echo(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if json_out:
        with open(json_out, "w") as f:
            json.dump([c.to_json() for c in checks], f, indent=1)
    sys.exit(EXIT_FAIL if failed else EXIT_OK)


@main.command("run")
@click.option("-c", "--config", "config", required=True, help="Config JSON file (or inline JSON object).")
@click.option("-o", "--out", default=None, help=f"Output root (default ${OUT_ENV} or ./runs).")
def run_cmd(config, out):
    """Execute one run and print its directory."""
    from .runner import run
    try:
        cfg = load_config(config)
    except ConfigError as exc:
        _config_error(exc)
    click.echo(str(run(cfg, out)))


@main.command("sweep")
@click.option("-c", "--config", "config", required=True, help="Grid JSON file.")
@click.option("-j", "--jobs", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("-o", "--out", default=None, help=f"Output root (default ${OUT_ENV} or ./runs).")
def sweep_cmd(config, jobs, out):
    """Cross product of grid axes x seeds; failed runs are reported, siblings continue."""
    from .sweep import sweep
    try:
        root, statuses = sweep(config, jobs, out)
    except ConfigError as exc:
        _config_error(exc)
    for s in statuses:
        click.echo(f"{'ok  ' if s.ok else 'FAIL'} {s.run_id}" + ("" if s.ok else f": {s.error}"))
    bad = sum(not s.ok for s in statuses)
    click.echo(f"{len(statuses) - bad}/{len(statuses)} runs completed in {root}")
    sys.exit(EXIT_FAIL if bad else EXIT_OK)


@main.command("report")
@click.argument("kind", type=click.Choice(["correlations", "curves"]))
@click.option("-i", "--input", "inputs", multiple=True, required=True, help="Run or sweep directory (repeatable).")
@click.option("-o", "--out", default="report", show_default=True)
@click.option("--gap-metric", default="gap", show_default=True, type=click.Choice(["gap", "gap_loss"]),
              help="Scalar used as the generalization gap (correlations only).")
def report_cmd(kind, inputs, out, gap_metric):
    """Figure pipelines over finished runs; writes CSV, SVG and a JSON summary to OUT."""
    from .report import load_runs, report_correlations, report_curves
    runs = load_runs(inputs)
    if not runs:
        click.echo("no run directories found", err=True)
        sys.exit(EXIT_FAIL)
    if kind == "correlations":
        summary = report_correlations(runs, out, gap_metric)
        for row in summary["correlations"]:
            click.echo(f"{row['experiment']} n_train={row['n_train']}: r={row['r']} "
                       f"CI=[{row['ci_low']}, {row['ci_high']}] ({row['status']})")
    else:
        summary = report_curves(runs, out)
        for g, v in sorted(summary["groups"].items()):
            click.echo(f"{g}: {json.dumps(v, sort_keys=True)}")
    for n in summary["notices"]:
        click.echo(f"notice: {n}")
    click.echo(f"{len(runs)} runs -> {out}")


@main.group("env")
def env_group():
    """Environment utilities."""


@env_group.command("inspect")
@click.option("-c", "--config", "config", required=True, help="Run config whose environment to build.")
@click.option("--save", default=None, help="Directory for the dataset or buffer files (TNSR, JSON, CSV).")
def env_inspect(config, save):
    """Print a JSON summary of the environment a config builds."""
    from .data import describe_env
    try:
        cfg = load_config(config)
    except ConfigError as exc:
        _config_error(exc)
    try:
        info = describe_env(cfg, save)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(json.dumps(info, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
