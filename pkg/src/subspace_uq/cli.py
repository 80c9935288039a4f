# ruff: noqa: UP007
from __future__ import annotations

import logging
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from functools import partial
from pathlib import Path
from typing import Annotated, Optional, override

import attrs
import click
import rich
import typer
from rich.console import Console
from rich.table import Table
from typer.core import TyperGroup as TyperGroupBase

from .__about__ import __title__, __version__
from .artifacts import (
    CltSummary,
    write_bias_table,
    write_clt_histogram,
    write_clt_summary,
    write_coverage,
    write_series_decay,
)
from .bias import BiasOrder, LambdaKind
from .config import ConfigFieldMetadata
from .config_manager import ConfigFileError, read_config_file, update_config_file
from .errors import (
    ExperimentFailureError,
    InternalConsistencyError,
    InvalidArgumentError,
    NumericalFailureError,
    PreconditionViolationError,
)
from .harness import bias_table, coverage_table, run_experiment, series_decay_rows
from .logs import setup_application_logging
from .model import LambdaProfile
from .selftest import run_selftest
from .study_config import (
    BiasTableSection,
    CltSection,
    CoverageSection,
    ModelSection,
    SeriesSection,
    StudyConfig,
    parse_alphas,
    parse_lambda_grid,
    parse_orders,
    resolve_seed,
)

logger = logging.getLogger(__name__)

err_console = Console(stderr=True)


class TyperGroup(TyperGroupBase):
    """Custom TyperGroup class."""

    @override
    def get_usage(self, context: click.Context) -> str:
        """Add app title above usage section"""
        usage = super().get_usage(context)
        return f"{__title__} {__version__} \n\n {usage}"


app = typer.Typer(
    context_settings={"help_option_names": ["--help", "-h"]},
    rich_markup_mode="rich",
    pretty_exceptions_show_locals=False,
    pretty_exceptions_enable=False,
    no_args_is_help=True,
    cls=TyperGroup,
)


def version_callback(value: bool) -> None:
    if value:
        rich.print(f"[bold]{__title__}[/bold] [cyan]{__version__}[/cyan]")
        raise typer.Exit()


def get_help(field_name: str, /, attrs_class: type[attrs.AttrsInstance]) -> str | None:
    return ConfigFieldMetadata.from_field_name(
        field_name=field_name, attrs_class=attrs_class
    ).help


study_help = partial(get_help, attrs_class=StudyConfig)
model_help = partial(get_help, attrs_class=ModelSection)
bias_table_help = partial(get_help, attrs_class=BiasTableSection)
clt_help = partial(get_help, attrs_class=CltSection)
coverage_help = partial(get_help, attrs_class=CoverageSection)
series_help = partial(get_help, attrs_class=SeriesSection)

StudyOption = partial(typer.Option, show_default=False, rich_help_panel="Study Options")
ModelOption = partial(typer.Option, show_default=False, rich_help_panel="Model Options")
ExperimentOption = partial(
    typer.Option, show_default=False, rich_help_panel="Experiment Options"
)

ConfigPathOption = Annotated[
    Optional[Path],
    StudyOption(
        "--config",
        "-c",
        help="Study config file. Command line options take precedence over it.",
        exists=True,
        file_okay=True,
        dir_okay=False,
        resolve_path=True,
    ),
]
SeedOption = Annotated[Optional[int], StudyOption(help=study_help("seed"))]
WorkersOption = Annotated[
    Optional[int], StudyOption(min=1, help=study_help("workers"))
]
OutputDirOption = Annotated[
    Optional[Path],
    StudyOption(
        "--output-dir",
        "-o",
        help=study_help("output_directory"),
        file_okay=False,
        dir_okay=True,
    ),
]
D1Option = Annotated[Optional[int], ModelOption(min=1, help=model_help("d1"))]
D2Option = Annotated[Optional[int], ModelOption(min=1, help=model_help("d2"))]
RankOption = Annotated[Optional[int], ModelOption("--r", min=1, help=model_help("r"))]
ProfileOption = Annotated[
    Optional[LambdaProfile],
    ModelOption(case_sensitive=False, help=model_help("lambda_profile")),
]
EstimatorOption = Annotated[
    Optional[LambdaKind],
    ExperimentOption(case_sensitive=False, help=clt_help("estimator")),
]
RepsOption = Annotated[Optional[int], ExperimentOption(min=1, help="Number of replicates")]


def load_study_config(config_path: Path | None) -> StudyConfig:
    """
    Raises:
        typer.BadParameter: The config file can't be used
    """
    if config_path is None:
        return StudyConfig()
    try:
        return read_config_file(config_class=StudyConfig, config_file_path=config_path)
    except ConfigFileError as e:
        raise typer.BadParameter(message=str(e), param_hint="--config") from e


def merge_study_config(
    study_config: StudyConfig,
    *,
    seed: int | None,
    workers: int | None,
    output_directory: Path | None,
    d1: int | None = None,
    d2: int | None = None,
    r: int | None = None,
    lambda_profile: LambdaProfile | None = None,
    lambda_value: float | None = None,
) -> StudyConfig:
    """
    Merge `study_config` with CLI options. Any specified CLI options will
    override the existing values in `study_config`. A signal strength from
    the command line also replaces explicit `lambda_values` from the file.
    """
    model = study_config.model
    lambda_values = model.lambda_values
    if lambda_value is not None and lambda_values is not None:
        logger.info(
            "--lambda %g replaces lambda_values %s from the config file",
            lambda_value,
            lambda_values,
        )
        lambda_values = None
    return attrs.evolve(
        study_config,
        seed=seed if seed is not None else study_config.seed,
        workers=workers if workers is not None else study_config.workers,
        output_directory=(
            output_directory
            if output_directory is not None
            else study_config.output_directory
        ),
        model=attrs.evolve(
            model,
            d1=d1 if d1 is not None else model.d1,
            d2=d2 if d2 is not None else model.d2,
            r=r if r is not None else model.r,
            lambda_profile=lambda_profile or model.lambda_profile,
            lambda_values=lambda_values,
        ),
    )


def _parse_option[T](
    parser: Callable[[str], T], value: str | None, hint: str
) -> T | None:
    """Parse a text option early so bad values are reported as usage errors"""
    if value is None:
        return None
    try:
        return parser(value)
    except InvalidArgumentError as e:
        raise typer.BadParameter(message=str(e), param_hint=hint) from e


@contextmanager
def handle_study_errors() -> Iterator[None]:
    """
    Map library errors to CLI exits. Invalid arguments are usage errors (exit
    2). Failed experiments and checks exit with 1.
    """
    try:
        yield
    except InvalidArgumentError as e:
        raise typer.BadParameter(message=str(e)) from e
    except (
        ExperimentFailureError,
        PreconditionViolationError,
        NumericalFailureError,
        InternalConsistencyError,
    ) as e:
        logger.error("%s: %s", type(e).__name__, e)
        err_console.print(f"[bold red]Error:[/bold red] {e}")
        raise typer.Exit(code=1) from e


@app.callback()
def main(
    version: Annotated[
        bool,
        typer.Option(
            "--version",
            help="Print version and exit.",
            is_eager=True,
            callback=version_callback,
        ),
    ] = False,
    verbose: Annotated[
        bool, typer.Option("--verbose", "-v", help="Show debug log messages.")
    ] = False,
) -> None:
    """
    Error analysis of empirical singular subspaces: bias-corrected projection
    distances, their normal approximation and confidence regions, validated
    by reproducible Monte-Carlo experiments.
    """
    setup_application_logging(verbose=verbose)


@app.command("bias-table")
def bias_table_command(
    config_path: ConfigPathOption = None,
    seed: SeedOption = None,
    workers: WorkersOption = None,
    output_dir: OutputDirOption = None,
    d1: D1Option = None,
    d2: D2Option = None,
    r: RankOption = None,
    lambda_profile: ProfileOption = None,
    lambda_grid: Annotated[
        Optional[str],
        ExperimentOption("--lambda", help=bias_table_help("lambda_grid")),
    ] = None,
    orders: Annotated[
        Optional[str], ExperimentOption(help=bias_table_help("orders"))
    ] = None,
    reps: RepsOption = None,
) -> None:
    """Compare E dist² over Monte-Carlo replicates with the bias ladder."""
    _parse_option(parse_lambda_grid, lambda_grid, "--lambda")
    _parse_option(parse_orders, orders, "--orders")
    study = merge_study_config(
        load_study_config(config_path),
        seed=seed,
        workers=workers,
        output_directory=output_dir,
        d1=d1,
        d2=d2,
        r=r,
        lambda_profile=lambda_profile,
    )
    section = study.bias_table
    study = attrs.evolve(
        study,
        bias_table=attrs.evolve(
            section,
            lambda_grid=lambda_grid or section.lambda_grid,
            orders=orders or section.orders,
            reps=reps or section.reps,
        ),
    )
    with handle_study_errors():
        experiment, grid = study.bias_table_experiment()
        rows = bias_table(experiment, grid, workers=study.workers)
    path = write_bias_table(study.output_directory, rows)

    table = Table("λ", "order", "B", "MC mean", "MC SE", "B - MC")
    for row in rows:
        table.add_row(
            f"{row.lambda_base:g}",
            str(row.order),
            f"{row.bias:.6g}",
            f"{row.mc_mean:.6g}",
            f"{row.mc_se:.3g}",
            f"{row.signed_err:+.3g}",
        )
    rich.print(table)
    rich.print(f"Wrote [green]{path}[/green]")


@app.command("clt")
def clt_command(
    config_path: ConfigPathOption = None,
    seed: SeedOption = None,
    workers: WorkersOption = None,
    output_dir: OutputDirOption = None,
    d1: D1Option = None,
    d2: D2Option = None,
    r: RankOption = None,
    lambda_profile: ProfileOption = None,
    lambda_value: Annotated[
        Optional[float],
        ExperimentOption("--lambda", min=0, help=clt_help("lambda_value")),
    ] = None,
    estimator: EstimatorOption = None,
    order: Annotated[Optional[str], ExperimentOption(help=clt_help("order"))] = None,
    reps: RepsOption = None,
) -> None:
    """Distribution of the normalized, bias-corrected dist² statistic."""
    bias_order = _parse_option(BiasOrder.parse, order, "--order")
    study = merge_study_config(
        load_study_config(config_path),
        seed=seed,
        workers=workers,
        output_directory=output_dir,
        d1=d1,
        d2=d2,
        r=r,
        lambda_profile=lambda_profile,
        lambda_value=lambda_value,
    )
    section = study.clt
    study = attrs.evolve(
        study,
        clt=attrs.evolve(
            section,
            lambda_value=(
                lambda_value if lambda_value is not None else section.lambda_value
            ),
            estimator=estimator or section.estimator,
            order=bias_order or section.order,
            reps=reps or section.reps,
        ),
    )
    with handle_study_errors():
        experiment = study.clt_experiment()
        summary = run_experiment(experiment, workers=study.workers)
    summary_order = experiment.orders[0]
    clt_summary = CltSummary.from_summary(summary, experiment.estimator, summary_order)
    write_clt_histogram(study.output_directory, summary.order_summary(summary_order))
    path = write_clt_summary(study.output_directory, clt_summary)

    rich.print(
        f"KS distance to N(0, 1): [bold]{clt_summary.ks:.4f}[/bold], "
        f"mean {clt_summary.mean:+.4f} (SE {clt_summary.se:.4f}), "
        f"variance {clt_summary.var:.4f} over {clt_summary.reps} replicates"
    )
    if clt_summary.shrink_failures:
        rich.print(
            f"[yellow]{clt_summary.shrink_failures} replicates had singular "
            "values below the detectability edge[/yellow]"
        )
    rich.print(f"Wrote [green]{path}[/green]")


@app.command("series-check")
def series_check_command(
    config_path: ConfigPathOption = None,
    seed: SeedOption = None,
    output_dir: OutputDirOption = None,
    d1: Annotated[Optional[int], ModelOption(min=1, help=series_help("d1"))] = None,
    d2: Annotated[Optional[int], ModelOption(min=1, help=series_help("d2"))] = None,
    r: Annotated[
        Optional[int], ModelOption("--r", min=1, help=series_help("r"))
    ] = None,
    lambda_profile: ProfileOption = None,
    lambda_value: Annotated[
        Optional[float],
        ExperimentOption("--lambda", min=0, help=series_help("lambda_value")),
    ] = None,
    noise_ratio: Annotated[
        Optional[float],
        ExperimentOption(min=0, help=series_help("noise_ratio")),
    ] = None,
    max_order: Annotated[
        Optional[int],
        ExperimentOption(min=1, max=12, help=series_help("max_order")),
    ] = None,
    seeds: Annotated[
        Optional[int], ExperimentOption(min=1, help=series_help("seeds"))
    ] = None,
) -> None:
    """Truncated perturbation series against a dense eigendecomposition."""
    study = merge_study_config(
        load_study_config(config_path),
        seed=seed,
        workers=None,
        output_directory=output_dir,
        lambda_profile=lambda_profile,
    )
    section = study.series
    section = attrs.evolve(
        section,
        d1=d1 if d1 is not None else section.d1,
        d2=d2 if d2 is not None else section.d2,
        r=r if r is not None else section.r,
        lambda_value=lambda_value if lambda_value is not None else section.lambda_value,
        noise_ratio=noise_ratio if noise_ratio is not None else section.noise_ratio,
        max_order=max_order if max_order is not None else section.max_order,
        seeds=seeds if seeds is not None else section.seeds,
    )
    study = attrs.evolve(study, series=section)
    with handle_study_errors():
        experiment = study.series_experiment()
        rows = series_decay_rows(experiment, section.noise_ratio, section.max_order)
    path = write_series_decay(study.output_directory, rows)

    table = Table("K", "max ‖error‖_F", "tail bound")
    for row in rows:
        table.add_row(
            str(row.max_order), f"{row.frob_err:.3e}", f"{row.tail_bound:.3e}"
        )
    rich.print(table)
    rich.print(f"Wrote [green]{path}[/green]")


@app.command("coverage")
def coverage_command(
    config_path: ConfigPathOption = None,
    seed: SeedOption = None,
    workers: WorkersOption = None,
    output_dir: OutputDirOption = None,
    d1: D1Option = None,
    d2: D2Option = None,
    r: RankOption = None,
    lambda_profile: ProfileOption = None,
    lambda_value: Annotated[
        Optional[float],
        ExperimentOption("--lambda", min=0, help=coverage_help("lambda_value")),
    ] = None,
    alphas: Annotated[
        Optional[str],
        ExperimentOption(help="Comma separated nominal non-coverage levels"),
    ] = None,
    estimator: EstimatorOption = None,
    order: Annotated[
        Optional[str], ExperimentOption(help=coverage_help("order"))
    ] = None,
    reps: RepsOption = None,
) -> None:
    """Empirical coverage of the dist² confidence region."""
    alpha_levels = _parse_option(parse_alphas, alphas, "--alphas")
    bias_order = _parse_option(BiasOrder.parse, order, "--order")
    study = merge_study_config(
        load_study_config(config_path),
        seed=seed,
        workers=workers,
        output_directory=output_dir,
        d1=d1,
        d2=d2,
        r=r,
        lambda_profile=lambda_profile,
        lambda_value=lambda_value,
    )
    section = study.coverage
    study = attrs.evolve(
        study,
        coverage=attrs.evolve(
            section,
            lambda_value=(
                lambda_value if lambda_value is not None else section.lambda_value
            ),
            alphas=alpha_levels or section.alphas,
            estimator=estimator or section.estimator,
            order=bias_order or section.order,
            reps=reps or section.reps,
        ),
    )
    with handle_study_errors():
        experiment = study.coverage_experiment()
        rows = coverage_table(experiment, experiment.alphas, workers=study.workers)
    path = write_coverage(study.output_directory, rows)

    table = Table("α", "nominal", "coverage", "SE", "reps")
    for row in rows:
        table.add_row(
            f"{row.alpha:g}",
            f"{1 - row.alpha:g}",
            f"{row.coverage:.4f}",
            f"{row.se:.4f}",
            str(row.reps),
        )
    rich.print(table)
    rich.print(f"Wrote [green]{path}[/green]")


@app.command("selftest")
def selftest_command(
    seed: SeedOption = None,
    reps: Annotated[
        int, ExperimentOption(min=2, help="Replicates of the moment smoke test")
    ] = 5000,
) -> None:
    """Exact identities, shrinkage round trip and a moment smoke test."""
    with handle_study_errors():
        results = run_selftest(reps=reps, seed=resolve_seed(seed))
    for result in results:
        status = "[green]ok[/green]" if result.passed else "[bold red]FAILED[/bold red]"
        rich.print(f"{status} {result.name}: {result.detail}")
    if not all(result.passed for result in results):
        raise typer.Exit(code=1)


@app.command("init-config")
def init_config_command(
    path: Annotated[
        Path,
        typer.Argument(
            help="Where to write the config file", dir_okay=False, resolve_path=True
        ),
    ],
    force: Annotated[
        bool, typer.Option("--force", "-f", help="Overwrite an existing file")
    ] = False,
) -> None:
    """Write a study config file with every default and its documentation."""
    if path.exists() and not force:
        raise typer.BadParameter(
            message=f"{path} already exists. Use --force to overwrite it",
            param_hint="PATH",
        )
    update_config_file(StudyConfig(), path)
    rich.print(f"Wrote [green]{path}[/green]")
