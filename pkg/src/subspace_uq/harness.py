"""
Monte-Carlo harness.

Replicate `i` draws its noise from stream `i`, so replicates are independent
of each other and of the schedule they run on. Replicates run on worker
threads under a trio capacity limiter. Their results are kept by index and
folded into the summary in index order, which makes summaries identical for
any worker count.
"""

import bisect
import logging
import math
from collections.abc import Sequence
from enum import StrEnum
from typing import Self

import attrs
import numpy as np
import scipy.stats
import trio

from .bias import (
    BiasOrder,
    LambdaKind,
    bias_for_order,
    estimate_singular_values,
)
from .errors import ExperimentFailureError, InvalidArgumentError, NumericalFailureError
from .inference import (
    ConfidenceRegionSpec,
    clt_statistic,
    confidence_region_contains,
    coverage_se,
    subspace_distance2,
)
from .model import (
    Dims,
    FloatArray,
    LambdaProfile,
    LowRankModel,
    NoiseSpec,
    dilate,
    make_model,
    observe,
    profile_singular_values,
    sample_noise,
    top_r_svd,
    validate_singular_values,
)
from .moments import (
    mp_moment_beta,
    wishart_frobenius_mc,
    wishart_frobenius_moment,
    wishart_trace_moment_exact,
    wishart_trace_moment_mc,
)
from .series import (
    eigen_projector_delta,
    noise_norm,
    projector_tail_bound,
    truncated_projector_deltas,
)

logger = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.01
HISTOGRAM_LOW = -5.0
HISTOGRAM_HIGH = 5.0
HISTOGRAM_BINS = 100


class ExperimentKind(StrEnum):
    """
    - bias-approx: Compare E dist² with the bias ladder.
    - clt-histogram: Distribution of the CLT statistic.
    - coverage: Coverage of the confidence region.
    - series-check: Perturbation series against a dense eigensolver.
    - moment-check: Random-matrix moments against closed forms.
    """

    BIAS_APPROX = "bias-approx"
    CLT_HISTOGRAM = "clt-histogram"
    COVERAGE = "coverage"
    SERIES_CHECK = "series-check"
    MOMENT_CHECK = "moment-check"


_NORMALIZED_KINDS = frozenset({ExperimentKind.CLT_HISTOGRAM, ExperimentKind.COVERAGE})


def _orders_converter(orders: Sequence[BiasOrder | int]) -> tuple[BiasOrder, ...]:
    return tuple(
        order if isinstance(order, BiasOrder) else BiasOrder(order) for order in orders
    )


def _optional_floats(values: Sequence[float] | None) -> tuple[float, ...] | None:
    return None if values is None else tuple(float(value) for value in values)


@attrs.frozen(kw_only=True)
class ExperimentConfig:
    kind: ExperimentKind
    dims: Dims
    lambda_base: float
    profile: LambdaProfile = LambdaProfile.GEOMETRIC
    lambda_values: tuple[float, ...] | None = attrs.field(
        default=None, converter=_optional_floats
    )
    replicates: int
    seed: int
    orientation_seed: int | None = None
    estimator: LambdaKind = LambdaKind.TRUE
    orders: tuple[BiasOrder, ...] = attrs.field(
        default=(BiasOrder(1),), converter=_orders_converter
    )
    alphas: tuple[float, ...] = attrs.field(default=(), converter=tuple)
    noise_sigma: float = 1.0

    def __attrs_post_init__(self) -> None:
        if self.replicates < 1:
            raise InvalidArgumentError(
                f"Replicate count must be at least 1, got {self.replicates}"
            )
        if not self.orders:
            raise InvalidArgumentError("At least one bias order is needed")
        for alpha in self.alphas:
            ConfidenceRegionSpec(alpha=alpha)
        if self.kind in _NORMALIZED_KINDS and self.dims.d_star == 0:
            raise InvalidArgumentError(
                f"{self.kind} needs d1 + d2 > 2r for a positive CLT normalizer, "
                f"got {self.dims}"
            )
        validate_singular_values(self.singular_values, self.dims.r)

    @property
    def singular_values(self) -> FloatArray:
        """Explicit `lambda_values` if given, otherwise the profile at `lambda_base`"""
        if self.lambda_values is not None:
            return np.asarray(self.lambda_values, dtype=np.float64)
        return profile_singular_values(self.profile, self.dims.r, self.lambda_base)

    def with_lambda_base(self, lambda_base: float) -> Self:
        return attrs.evolve(self, lambda_base=lambda_base, lambda_values=None)

    def build_model(self) -> LowRankModel:
        orientation_seed = (
            self.seed if self.orientation_seed is None else self.orientation_seed
        )
        return make_model(self.dims, self.singular_values, orientation_seed)


@attrs.define
class RunningMoments:
    """Streaming mean and variance (Welford), mergeable with Chan's update"""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def merge(self, other: "RunningMoments") -> None:
        if other.count == 0:
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self.m2 += other.m2 + delta**2 * self.count * other.count / total
        self.count = total

    def snapshot(self) -> "MomentsSnapshot":
        variance = self.m2 / (self.count - 1) if self.count > 1 else 0.0
        return MomentsSnapshot(count=self.count, mean=self.mean, variance=variance)


@attrs.frozen
class MomentsSnapshot:
    count: int
    mean: float
    variance: float

    @property
    def se(self) -> float:
        if self.count == 0:
            return math.nan
        return math.sqrt(self.variance / self.count)


def _histogram_edges() -> tuple[float, ...]:
    width = (HISTOGRAM_HIGH - HISTOGRAM_LOW) / HISTOGRAM_BINS
    return tuple(
        round(HISTOGRAM_LOW + index * width, 10) for index in range(HISTOGRAM_BINS + 1)
    )


@attrs.define
class Histogram:
    """
    Fixed bins of width 0.1 on [-5, 5), left-closed. Values outside the bins
    are counted in `below` and `above`.
    """

    edges: tuple[float, ...] = attrs.field(factory=_histogram_edges)
    counts: list[int] = attrs.field()
    below: int = 0
    above: int = 0

    @counts.default
    def _counts_default(self) -> list[int]:
        return [0] * (len(self.edges) - 1)

    def push(self, value: float) -> None:
        if value < self.edges[0]:
            self.below += 1
        elif value >= self.edges[-1]:
            self.above += 1
        else:
            self.counts[bisect.bisect_right(self.edges, value) - 1] += 1

    def snapshot(self) -> "HistogramSnapshot":
        return HistogramSnapshot(
            edges=self.edges,
            counts=tuple(self.counts),
            below=self.below,
            above=self.above,
        )


@attrs.frozen
class HistogramSnapshot:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    below: int
    above: int

    @property
    def total(self) -> int:
        return sum(self.counts) + self.below + self.above

    def masses(self) -> tuple[float, ...]:
        total = self.total
        return tuple(count / total for count in self.counts) if total else ()

    def densities(self) -> tuple[float, ...]:
        """Counts divided by (total · bin width), comparable with the normal pdf"""
        total = self.total
        if not total:
            return tuple(0.0 for _ in self.counts)
        return tuple(
            count / (total * (right - left))
            for count, left, right in zip(
                self.counts, self.edges[:-1], self.edges[1:], strict=True
            )
        )

    def outside_mass(self) -> float:
        total = self.total
        return (self.below + self.above) / total if total else 0.0


def ks_distance(samples: Sequence[float] | FloatArray) -> float:
    """
    Two-sided Kolmogorov-Smirnov distance between the empirical CDF of
    `samples` and Φ.

    Raises:
        InvalidArgumentError: Fewer than 2 samples
    """
    values = np.asarray(samples, dtype=np.float64)
    if values.size < 2:
        raise InvalidArgumentError("KS distance needs at least 2 samples")
    return float(scipy.stats.kstest(values, "norm", method="asymp").statistic)


@attrs.frozen
class CoverageCount:
    alpha: float
    hits: int
    total: int

    @property
    def coverage(self) -> float:
        return self.hits / self.total if self.total else math.nan

    @property
    def se(self) -> float:
        return coverage_se(self.hits, self.total)


@attrs.frozen
class OrderSummary:
    order: BiasOrder
    bias: MomentsSnapshot
    statistic: MomentsSnapshot
    ks: float
    histogram: HistogramSnapshot
    coverage: tuple[CoverageCount, ...]
    degraded: int


@attrs.frozen
class ReplicateSummary:
    kind: ExperimentKind
    replicates: int
    svd_failures: int
    shrink_failures: int
    dist2: MomentsSnapshot
    dist2_left: MomentsSnapshot
    dist2_right: MomentsSnapshot
    lambda_hat: tuple[MomentsSnapshot, ...]
    lambda_shrunk: tuple[MomentsSnapshot, ...]
    orders: tuple[OrderSummary, ...]

    @property
    def completed(self) -> int:
        return self.replicates - self.svd_failures

    def order_summary(self, order: BiasOrder) -> OrderSummary:
        """
        Raises:
            KeyError: `order` wasn't part of the experiment
        """
        for summary in self.orders:
            if summary.order == order:
                return summary
        raise KeyError(str(order))


@attrs.frozen
class ReplicateResult:
    index: int
    dist2_left: float
    dist2_right: float
    lambda_hat: tuple[float, ...]
    lambda_shrunk: tuple[float, ...]
    shrink_failed: bool
    biases: tuple[float, ...]
    # Empty when d1 + d2 = 2r
    statistics: tuple[float, ...]
    degraded: bool
    # One tuple per order, one flag per alpha
    contained: tuple[tuple[bool, ...], ...]

    @property
    def dist2(self) -> float:
        return self.dist2_left + self.dist2_right


@attrs.frozen
class ReplicateFailure:
    index: int
    reason: str


@attrs.frozen
class _ReplicateContext:
    config: ExperimentConfig
    model: LowRankModel


def _run_replicate(
    context: _ReplicateContext, index: int
) -> ReplicateResult | ReplicateFailure:
    config, model = context.config, context.model
    dims = config.dims
    noise = sample_noise(
        dims, NoiseSpec(seed=config.seed, stream=index, sigma=config.noise_sigma)
    )
    try:
        empirical = top_r_svd(observe(model, noise), dims.r)
    except NumericalFailureError as e:
        return ReplicateFailure(index=index, reason=str(e))
    dist2_left = subspace_distance2(empirical.u_hat, model.u)
    dist2_right = subspace_distance2(empirical.v_hat, model.v)
    dist2 = dist2_left + dist2_right

    shrunk = estimate_singular_values(
        LambdaKind.SHRUNK,
        dims,
        true_values=model.lambdas,
        lambda_hat=empirical.lambda_hat,
    )
    estimate = (
        shrunk
        if config.estimator is LambdaKind.SHRUNK
        else estimate_singular_values(
            config.estimator,
            dims,
            true_values=model.lambdas,
            lambda_hat=empirical.lambda_hat,
        )
    )
    # With d1 + d2 = 2r the normalizer vanishes and there is no statistic
    statistics: tuple[float, ...] = ()
    if dims.d_star > 0:
        clt = [clt_statistic(dist2, dims, estimate, order) for order in config.orders]
        biases = tuple(statistic.bias for statistic in clt)
        statistics = tuple(statistic.value for statistic in clt)
    else:
        biases = tuple(bias_for_order(dims, estimate, order) for order in config.orders)
    contained: tuple[tuple[bool, ...], ...] = ()
    if config.kind is ExperimentKind.COVERAGE:
        contained = tuple(
            tuple(
                confidence_region_contains(
                    (model.u, model.v),
                    (empirical.u_hat, empirical.v_hat),
                    dims,
                    estimate,
                    ConfidenceRegionSpec(alpha=alpha, bias_order=order),
                ).contained
                for alpha in config.alphas
            )
            for order in config.orders
        )
    if not shrunk.all_valid:
        logger.debug("Replicate %d: %d shrinkage failures", index, shrunk.invalid_count)
    return ReplicateResult(
        index=index,
        dist2_left=dist2_left,
        dist2_right=dist2_right,
        lambda_hat=tuple(map(float, empirical.lambda_hat)),
        lambda_shrunk=tuple(map(float, shrunk.values)),
        shrink_failed=not shrunk.all_valid,
        biases=biases,
        statistics=statistics,
        degraded=not estimate.all_valid,
        contained=contained,
    )


async def _run_replicates(
    context: _ReplicateContext, workers: int
) -> list[ReplicateResult | ReplicateFailure]:
    replicates = context.config.replicates
    outcomes: list[ReplicateResult | ReplicateFailure | None] = [None] * replicates
    limiter = trio.CapacityLimiter(workers)

    async def run_one(index: int) -> None:
        outcomes[index] = await trio.to_thread.run_sync(
            _run_replicate, context, index, limiter=limiter
        )

    async with trio.open_nursery() as nursery:
        for index in range(replicates):
            nursery.start_soon(run_one, index)
    return [outcome for outcome in outcomes if outcome is not None]


def _summarize(
    config: ExperimentConfig, outcomes: Sequence[ReplicateResult | ReplicateFailure]
) -> ReplicateSummary:
    results = [outcome for outcome in outcomes if isinstance(outcome, ReplicateResult)]
    r = config.dims.r
    dist2 = RunningMoments()
    dist2_left = RunningMoments()
    dist2_right = RunningMoments()
    lambda_hat = [RunningMoments() for _ in range(r)]
    lambda_shrunk = [RunningMoments() for _ in range(r)]
    bias = [RunningMoments() for _ in config.orders]
    statistic = [RunningMoments() for _ in config.orders]
    histograms = [Histogram() for _ in config.orders]
    hits = [[0] * len(config.alphas) for _ in config.orders]
    degraded = 0
    shrink_failures = 0
    for result in sorted(results, key=lambda result: result.index):
        dist2.push(result.dist2)
        dist2_left.push(result.dist2_left)
        dist2_right.push(result.dist2_right)
        for moments, value in zip(lambda_hat, result.lambda_hat, strict=True):
            moments.push(value)
        for moments, value in zip(lambda_shrunk, result.lambda_shrunk, strict=True):
            moments.push(value)
        for position in range(len(config.orders)):
            bias[position].push(result.biases[position])
        for position, value in enumerate(result.statistics):
            statistic[position].push(value)
            histograms[position].push(value)
        for position, flags in enumerate(result.contained):
            for alpha_position, flag in enumerate(flags):
                hits[position][alpha_position] += flag
        degraded += result.degraded
        shrink_failures += result.shrink_failed

    order_summaries = []
    for position, order in enumerate(config.orders):
        samples = [result.statistics[position] for result in results if result.statistics]
        order_summaries.append(
            OrderSummary(
                order=order,
                bias=bias[position].snapshot(),
                statistic=statistic[position].snapshot(),
                ks=ks_distance(samples) if len(samples) >= 2 else math.nan,
                histogram=histograms[position].snapshot(),
                coverage=tuple(
                    CoverageCount(alpha=alpha, hits=count, total=len(results))
                    for alpha, count in zip(config.alphas, hits[position], strict=True)
                ),
                degraded=degraded,
            )
        )
    return ReplicateSummary(
        kind=config.kind,
        replicates=config.replicates,
        svd_failures=len(outcomes) - len(results),
        shrink_failures=shrink_failures,
        dist2=dist2.snapshot(),
        dist2_left=dist2_left.snapshot(),
        dist2_right=dist2_right.snapshot(),
        lambda_hat=tuple(moments.snapshot() for moments in lambda_hat),
        lambda_shrunk=tuple(moments.snapshot() for moments in lambda_shrunk),
        orders=tuple(order_summaries),
    )


def _first_leaf(group: BaseExceptionGroup[BaseException]) -> BaseException:
    first = group.exceptions[0]
    return _first_leaf(first) if isinstance(first, BaseExceptionGroup) else first


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ReplicateSummary:
    """
    Run every replicate of a Monte-Carlo experiment and summarize them.

    Raises:
        InvalidArgumentError: `config.kind` isn't a replicate experiment or
            `workers` < 1
        ExperimentFailureError: More than 1% of the replicates failed
    """
    if config.kind in (ExperimentKind.SERIES_CHECK, ExperimentKind.MOMENT_CHECK):
        raise InvalidArgumentError(
            f"{config.kind} experiments are run with their own row functions"
        )
    if workers < 1:
        raise InvalidArgumentError(f"Worker count must be at least 1, got {workers}")
    model = config.build_model()
    logger.info(
        "Running %s experiment: d1=%d d2=%d r=%d lambda=%s, %d replicates on %d workers",
        config.kind,
        config.dims.d1,
        config.dims.d2,
        config.dims.r,
        np.array2string(model.lambdas, precision=6),
        config.replicates,
        workers,
    )
    try:
        outcomes = trio.run(_run_replicates, _ReplicateContext(config, model), workers)
    except BaseExceptionGroup as group:
        logger.debug("Replicates raised", exc_info=group)
        raise _first_leaf(group) from None
    failures = [
        outcome for outcome in outcomes if isinstance(outcome, ReplicateFailure)
    ]
    for failure in failures:
        logger.warning("Skipped replicate %d: %s", failure.index, failure.reason)
    if len(failures) > MAX_FAILURE_FRACTION * config.replicates:
        raise ExperimentFailureError(
            failures=len(failures), replicates=config.replicates
        )
    summary = _summarize(config, outcomes)
    logger.info(
        "Finished %s experiment: mean dist2 %.6g, %d SVD failures, %d shrinkage failures",
        config.kind,
        summary.dist2.mean,
        summary.svd_failures,
        summary.shrink_failures,
    )
    return summary


@attrs.frozen
class BiasTableRow:
    lambda_base: float
    order: BiasOrder
    bias: float
    mc_mean: float
    mc_se: float

    @property
    def signed_err(self) -> float:
        return self.bias - self.mc_mean


def bias_table(
    config: ExperimentConfig,
    lambda_grid: Sequence[float] | None = None,
    workers: int = 1,
) -> list[BiasTableRow]:
    """
    One row per (λ, order) with B_∞ always included. Every λ reuses the same
    noise streams and model orientation.

    Raises:
        InvalidArgumentError: `config.kind` isn't bias-approx
        ExperimentFailureError: More than 1% of the replicates failed
    """
    if config.kind is not ExperimentKind.BIAS_APPROX:
        raise InvalidArgumentError(
            f"bias_table needs a bias-approx config, not {config.kind}"
        )
    orders = sorted(
        {*config.orders, BiasOrder.infinity()}, key=lambda order: order.sort_key()
    )
    grid = [config.lambda_base] if lambda_grid is None else list(lambda_grid)
    rows = []
    for lambda_base in grid:
        point_config = (
            config if lambda_grid is None else config.with_lambda_base(lambda_base)
        )
        summary = run_experiment(point_config, workers=workers)
        true_values = point_config.singular_values
        rows.extend(
            BiasTableRow(
                lambda_base=lambda_base,
                order=order,
                bias=bias_for_order(config.dims, true_values, order),
                mc_mean=summary.dist2.mean,
                mc_se=summary.dist2.se,
            )
            for order in orders
        )
    return rows


@attrs.frozen
class CoverageRow:
    alpha: float
    coverage: float
    se: float
    reps: int


def coverage_table(
    config: ExperimentConfig, alphas: Sequence[float], workers: int = 1
) -> list[CoverageRow]:
    """
    Fraction of replicates whose true (U, V) is inside the confidence region
    around (Û, V̂), for the first bias order of `config`.

    Raises:
        InvalidArgumentError: `config.kind` isn't coverage or an alpha is
            outside (0, 1)
        ExperimentFailureError: More than 1% of the replicates failed
    """
    if config.kind is not ExperimentKind.COVERAGE:
        raise InvalidArgumentError(
            f"coverage_table needs a coverage config, not {config.kind}"
        )
    summary = run_experiment(
        attrs.evolve(config, alphas=tuple(alphas)), workers=workers
    )
    order_summary = summary.orders[0]
    return [
        CoverageRow(
            alpha=count.alpha, coverage=count.coverage, se=count.se, reps=count.total
        )
        for count in order_summary.coverage
    ]


@attrs.frozen
class SeriesDecayRow:
    max_order: int
    frob_err: float
    tail_bound: float


def scaled_noise(
    dims: Dims, seed: int, stream: int, noise_ratio: float, lambda_r: float
) -> FloatArray:
    """Gaussian noise rescaled so that ‖X‖/λ_r equals `noise_ratio`"""
    noise = sample_noise(dims, NoiseSpec(seed=seed, stream=stream))
    return noise * (noise_ratio * lambda_r / noise_norm(noise))


def series_decay_rows(
    config: ExperimentConfig, noise_ratio: float, max_order: int
) -> list[SeriesDecayRow]:
    """
    Worst Frobenius error over `config.replicates` noise draws of the order-K
    series against a dense eigendecomposition, for K = 1..`max_order`.

    Raises:
        InvalidArgumentError: `config.kind` isn't series-check or `max_order`
            is outside [1, 12]
        PreconditionViolationError: `noise_ratio` ≥ 1/2
    """
    if config.kind is not ExperimentKind.SERIES_CHECK:
        raise InvalidArgumentError(
            f"series_decay_rows needs a series-check config, not {config.kind}"
        )
    model = config.build_model()
    dilation = dilate(model)
    lambda_r = float(model.lambdas[-1])
    worst = [0.0] * max_order
    bounds = [0.0] * max_order
    for stream in range(config.replicates):
        noise = scaled_noise(config.dims, config.seed, stream, noise_ratio, lambda_r)
        oracle = eigen_projector_delta(dilation, noise)
        partial_sums = truncated_projector_deltas(dilation, noise, max_order)
        norm = noise_norm(noise)
        for position, partial_sum in enumerate(partial_sums):
            error = float(np.linalg.norm(oracle - partial_sum))
            worst[position] = max(worst[position], error)
            bounds[position] = max(
                bounds[position],
                projector_tail_bound(norm, lambda_r, position + 1, config.dims.r),
            )
    logger.info(
        "Series check over %d draws at ||X||/lambda_r=%g",
        config.replicates,
        noise_ratio,
    )
    return [
        SeriesDecayRow(
            max_order=position + 1,
            frob_err=worst[position],
            tail_bound=bounds[position],
        )
        for position in range(max_order)
    ]


@attrs.frozen
class MomentCheckRow:
    name: str
    reference: float
    mc_mean: float
    mc_se: float
    approximation: float | None = None

    @property
    def deviation_se(self) -> float:
        if self.mc_se == 0:
            return 0.0 if self.mc_mean == self.reference else math.inf
        return abs(self.mc_mean - self.reference) / self.mc_se


def moment_check_rows(
    config: ExperimentConfig,
    frobenius_powers: Sequence[tuple[int, int]] = ((1, 1), (1, 2)),
    trace_orders: Sequence[int] = (2, 3, 4),
) -> list[MomentCheckRow]:
    """
    Monte-Carlo checks of the random-matrix moments behind the bias formulas.

    The Wishart Frobenius moment uses an r×d2 Gaussian matrix and the model's
    singular values. Trace moments E tr(W^(t-1)) use a d1m×(d2m+1) Gaussian
    matrix. Their reference is the exact finite-size value, and the leading
    order β_t is reported next to it.

    Raises:
        InvalidArgumentError: `config.kind` isn't moment-check
    """
    if config.kind is not ExperimentKind.MOMENT_CHECK:
        raise InvalidArgumentError(
            f"moment_check_rows needs a moment-check config, not {config.kind}"
        )
    dims = config.dims
    lambdas = config.singular_values
    rows = []
    for j1, j2 in frobenius_powers:
        estimate = wishart_frobenius_mc(
            lambdas, dims.d2, j1, j2, reps=config.replicates, seed=config.seed
        )
        rows.append(
            MomentCheckRow(
                name=f"wishart-frobenius j1={j1} j2={j2}",
                reference=wishart_frobenius_moment(lambdas, dims.d2, j1, j2),
                mc_mean=estimate.mean,
                mc_se=estimate.se,
            )
        )
    rows_count, columns_count = dims.d1m, dims.d2m + 1
    for t in trace_orders:
        estimate = wishart_trace_moment_mc(
            t - 1, rows_count, columns_count, reps=config.replicates, seed=config.seed
        )
        rows.append(
            MomentCheckRow(
                name=f"trace-moment t={t}",
                reference=float(
                    wishart_trace_moment_exact(t - 1, rows_count, columns_count)
                ),
                mc_mean=estimate.mean,
                mc_se=estimate.se,
                approximation=mp_moment_beta(t, dims.d1m, dims.d2m, 0.0),
            )
        )
    return rows
