"""Main entrypoint for the `fedsched` command."""
import contextlib
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
from attrs import define, evolve, field
from cattrs import unstructure
from rich.table import Table

from fedsched.core.config import Config, ConfigError, load_config
from fedsched.core.context import Context, build_topology, load_context
from fedsched.core.metrics import (
    MetricsParseError,
    degradation_ratios,
    metrics_table,
    parse_metrics_name,
    read_metrics,
    summarize_records,
)
from fedsched.core.orchestrator import (
    ExperimentPlan,
    run_ablation,
    run_experiment,
    scale_domains,
)
from fedsched.core.state import RunSummary, init_output, save_summary
from fedsched.core.strategy import LearningStrategy
from fedsched.utils import CONSOLE, error, log, success

EXIT_CONFIG = 3
EXIT_RUNTIME = 4

_STRATEGIES = [s.value for s in LearningStrategy]


@define(frozen=True, kw_only=True)
class RunConfig:
    """Arguments of the `run` command.

    Arguments:
        config_path: configuration document.
        out_dir: output directory.
        strategy: strategy overriding the configuration.
        rounds: rounds overriding the configuration.
        seed: seed overriding the configuration.
        scale: domain counts of a scaling run, empty for a single run.
        overrides: `section.key=value` overrides.
    """

    config_path: Path
    out_dir: Path
    strategy: Optional[LearningStrategy] = None
    rounds: Optional[int] = None
    seed: Optional[int] = None
    scale: List[int] = field(factory=list)
    overrides: List[str] = field(factory=list)


def _parse_scale(_ctx, _param, value: Optional[str]) -> List[int]:
    if not value:
        return []

    try:
        points = [int(x) for x in value.split(",") if x.strip()]

    except ValueError as exc:
        raise click.BadParameter(f"{value!r} is not a comma-separated list of integers") from exc

    if not points or any(p < 2 for p in points):
        raise click.BadParameter("scale points must be integers of at least 2")

    return points


@contextlib.contextmanager
def _exit_codes():
    """Maps configuration and runtime failures to exit codes."""
    try:
        yield

    except ConfigError as exc:
        error(str(exc))
        sys.exit(EXIT_CONFIG)

    except (ArithmeticError, LookupError, OSError, RuntimeError, ValueError) as exc:
        error(f"run aborted: {exc}")
        sys.exit(EXIT_RUNTIME)


def _effective_config(run_config: RunConfig) -> Config:
    config = load_config(run_config.config_path, run_config.overrides)

    experiment = config.experiment
    if run_config.strategy is not None:
        experiment = evolve(experiment, strategy=run_config.strategy)

    if run_config.rounds is not None:
        experiment = evolve(experiment, rounds=run_config.rounds)

    if run_config.seed is not None:
        experiment = evolve(experiment, seed=run_config.seed)

    if run_config.scale:
        experiment = evolve(experiment, scale=run_config.scale)

    return evolve(config, experiment=experiment)


def _admissible_context(config: Config) -> Context:
    ctx = load_context(config)

    report = ctx.topology.validate()
    if not report.ok:
        raise ConfigError("; ".join(v.message for v in report.violations))

    return ctx


def _run_options(func):
    options = [
        click.option(
            "-c",
            "--config",
            "config_path",
            required=True,
            type=click.Path(dir_okay=False, path_type=Path),
        ),
        click.option("-o", "--out", "out_dir", default="./runs", type=click.Path(path_type=Path)),
        click.option("--strategy", type=click.Choice(_STRATEGIES), default=None),
        click.option("--rounds", type=click.IntRange(min=1), default=None),
        click.option("--seed", type=int, default=None),
        click.option("--scale", callback=_parse_scale, default=None),
        click.option("--set", "overrides", multiple=True),
    ]
    for option in reversed(options):
        func = option(func)

    return func


def _to_run_config(**params) -> RunConfig:
    strategy = params.pop("strategy")
    params["overrides"] = list(params["overrides"])

    return RunConfig(
        strategy=None if strategy is None else LearningStrategy(strategy),
        **params,
    )


@click.group()
def cli():
    """Entrypoint for the fedsched command."""


@cli.command()
@_run_options
def run(**params):
    """Trains and evaluates the domains' schedulers."""
    run_config = _to_run_config(**params)

    with _exit_codes():
        config = _effective_config(run_config)
        plan = ExperimentPlan.from_config(config)
        ctx = _admissible_context(config)
        out_dir = init_output(run_config.out_dir)

        log(f"running strategy={plan.strategy.value} rounds={plan.rounds} seed={plan.seed}")
        if config.experiment.scale:
            runs = scale_domains(ctx, plan, config.experiment.scale, out_dir)
        else:
            runs = [run_experiment(ctx, plan, out_dir)]

        last = runs[-1].experiment
        results = [r.result for r in runs]
        summary = RunSummary(
            config=config,
            results=results,
            degradation=degradation_ratios(results),
            architectures=last.architectures,
            utilization=last.utilization,
            global_objectives=last.global_objectives,
            counters=last.counters,
            learning_rates=last.learning_rates,
        )
        path = save_summary(out_dir, summary)

    CONSOLE.print(metrics_table(results, title="Final evaluation"))
    success(f"summary written path={path}")


def parse_args(argv: Sequence[str]) -> RunConfig:
    """Parses the arguments of the `run` command.

    Raises:
        click.UsageError: on unknown flags, missing `--config` or invalid
            values.
    """
    with run.make_context("run", list(argv)) as click_ctx:
        return _to_run_config(**click_ctx.params)


@cli.command()
@click.argument(
    "files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option("--json", "as_json", is_flag=True, default=False)
def summarize(files: Sequence[Path], as_json: bool):
    """Summarizes metrics files."""
    results = []

    for path in files:
        strategy, _ = parse_metrics_name(path)
        try:
            records = read_metrics(path)

        except MetricsParseError as exc:
            error(str(exc))
            sys.exit(EXIT_RUNTIME)

        results.append(summarize_records(strategy, records))

    ratios = degradation_ratios(results)
    CONSOLE.print(metrics_table(results))

    if ratios:
        table = Table(title="Degradation")
        table.add_column("Strategy", justify="left")
        table.add_column("Ratio", justify="right")
        for strategy, ratio in ratios.items():
            table.add_row(strategy, f"{ratio:.4f}")

        CONSOLE.print(table)

    if as_json:
        document = {"results": unstructure(results), "degradation": ratios}
        click.echo(json.dumps(document, indent=4, sort_keys=True))


@cli.command()
@click.option(
    "-c", "--config", "config_path", required=True, type=click.Path(dir_okay=False, path_type=Path)
)
@click.option("--set", "overrides", multiple=True)
def validate(config_path: Path, overrides: Sequence[str]):
    """Shows the constraint violations of the configured topology."""
    with _exit_codes():
        topology = build_topology(load_config(config_path, list(overrides)))
        report = topology.validate()

    table = Table(title="Topology")
    table.add_column("Constraint", justify="left")
    table.add_column("Subject", justify="right")
    table.add_column("Message", justify="left")

    for violation in report.violations:
        table.add_row(
            violation.constraint,
            ",".join(str(x) for x in violation.subject),
            violation.message,
        )

    CONSOLE.print(table)

    if not report.ok:
        error(f"topology has violations count={len(report.violations)}")
        sys.exit(EXIT_CONFIG)

    success(
        f"topology admissible domains={len(topology.domains)} servers={len(topology.servers)}"
    )


@cli.command()
@_run_options
@click.option("--seeds", "seed_list", default=None, help="comma-separated seeds")
def ablation(seed_list: Optional[str], **params):
    """Compares the four strategies over several seeds."""
    run_config = _to_run_config(**params)

    with _exit_codes():
        config = _effective_config(run_config)
        plan = ExperimentPlan.from_config(config)
        ctx = _admissible_context(config)
        out_dir = init_output(run_config.out_dir)

        seeds = config.experiment.seeds
        if seed_list:
            try:
                seeds = [int(x) for x in seed_list.split(",") if x.strip()]
            except ValueError as exc:
                raise ConfigError(f"--seeds {seed_list!r} is not a list of integers") from exc

        report = run_ablation(ctx, plan, seeds, config.experiment.scale)
        path = save_summary(out_dir, report)

    table = Table(title="Ablation")
    table.add_column("Seed", justify="right")
    for strategy in _STRATEGIES:
        table.add_column(strategy, justify="right")
    table.add_column("Ordered", justify="right")
    table.add_column("Gap closed", justify="right")

    for seed, costs in report.finals.items():
        table.add_row(
            str(seed),
            *[f"{costs[s]:.4f}" for s in _STRATEGIES],
            "[green] yes" if report.ordering[seed] else "no",
            "[green] yes" if report.gap_closed[seed] else "no",
        )

    CONSOLE.print(table)
    log(f"median improvement over local-only={report.median_improvement:.3f}")
    success(f"ablation summary written path={path}")


if __name__ == "__main__":
    cli()  # pylint: disable=no-value-for-parameter
