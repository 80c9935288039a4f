"""Result files written by the CLI: UTF-8, LF line endings, numbers as %.12g."""

import csv
import logging
from collections.abc import Iterable, Sequence
from functools import cache
from pathlib import Path

import attrs
from cattrs.preconf.json import JsonConverter, make_converter

from .bias import BiasOrder, LambdaKind
from .harness import (
    BiasTableRow,
    CoverageRow,
    OrderSummary,
    ReplicateSummary,
    SeriesDecayRow,
)

logger = logging.getLogger(__name__)

BIAS_TABLE_FILE_NAME = "bias_table.csv"
CLT_HISTOGRAM_FILE_NAME = "clt_hist.csv"
CLT_SUMMARY_FILE_NAME = "clt_summary.json"
SERIES_DECAY_FILE_NAME = "series_decay.csv"
COVERAGE_FILE_NAME = "coverage.csv"

Cell = float | int | str | BiasOrder


def format_number(value: float) -> float:
    """`value` rounded to 12 significant digits"""
    return float(f"{value:.12g}")


def _format_cell(value: Cell) -> str:
    match value:
        case bool() | int():
            return str(value)
        case float():
            return f"{value:.12g}"
        case _:
            return str(value)


def write_csv(
    path: Path, header: Sequence[str], rows: Iterable[Sequence[Cell]]
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="UTF-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([_format_cell(cell) for cell in row] for row in rows)
    logger.info("Wrote %s", path)
    return path


def write_bias_table(output_dir: Path, rows: Iterable[BiasTableRow]) -> Path:
    return write_csv(
        output_dir / BIAS_TABLE_FILE_NAME,
        ("lambda", "order", "B", "mc_mean", "mc_se", "signed_err"),
        (
            (row.lambda_base, row.order, row.bias, row.mc_mean, row.mc_se, row.signed_err)
            for row in rows
        ),
    )


def write_clt_histogram(output_dir: Path, order_summary: OrderSummary) -> Path:
    histogram = order_summary.histogram
    return write_csv(
        output_dir / CLT_HISTOGRAM_FILE_NAME,
        ("bin_left", "bin_right", "density"),
        zip(
            histogram.edges[:-1],
            histogram.edges[1:],
            histogram.densities(),
            strict=True,
        ),
    )


def write_series_decay(output_dir: Path, rows: Iterable[SeriesDecayRow]) -> Path:
    return write_csv(
        output_dir / SERIES_DECAY_FILE_NAME,
        ("K", "frob_err", "tail_bound"),
        ((row.max_order, row.frob_err, row.tail_bound) for row in rows),
    )


def write_coverage(output_dir: Path, rows: Iterable[CoverageRow]) -> Path:
    return write_csv(
        output_dir / COVERAGE_FILE_NAME,
        ("alpha", "coverage", "se", "reps"),
        ((row.alpha, row.coverage, row.se, row.reps) for row in rows),
    )


@attrs.frozen(kw_only=True)
class CltSummary:
    ks: float = attrs.field(converter=format_number)
    mean: float = attrs.field(converter=format_number)
    var: float = attrs.field(converter=format_number)
    se: float = attrs.field(converter=format_number)
    reps: int
    svd_failures: int
    shrink_failures: int
    degraded: int
    outside_histogram: float = attrs.field(converter=format_number)
    estimator: LambdaKind
    order: BiasOrder

    @classmethod
    def from_summary(
        cls, summary: ReplicateSummary, estimator: LambdaKind, order: BiasOrder
    ) -> "CltSummary":
        """
        Raises:
            KeyError: `order` isn't part of `summary`
        """
        order_summary = summary.order_summary(order)
        statistic = order_summary.statistic
        return cls(
            ks=order_summary.ks,
            mean=statistic.mean,
            var=statistic.variance,
            se=statistic.se,
            reps=summary.completed,
            svd_failures=summary.svd_failures,
            shrink_failures=summary.shrink_failures,
            degraded=order_summary.degraded,
            outside_histogram=order_summary.histogram.outside_mass(),
            estimator=estimator,
            order=order,
        )


@cache
def get_json_converter() -> JsonConverter:
    converter = make_converter()
    converter.register_unstructure_hook(BiasOrder, str)
    return converter


def write_clt_summary(output_dir: Path, clt_summary: CltSummary) -> Path:
    path = output_dir / CLT_SUMMARY_FILE_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        get_json_converter().dumps(clt_summary, indent=2) + "\n",
        encoding="UTF-8",
        newline="\n",
    )
    logger.info("Wrote %s", path)
    return path
