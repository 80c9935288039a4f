import os
from pathlib import Path
from typing import override

import attrs
from packaging.version import Version

from .__about__ import __title__
from .bias import BiasOrder, LambdaKind, default_bias_order
from .config import Config, config_field
from .errors import InvalidArgumentError
from .harness import ExperimentConfig, ExperimentKind
from .model import Dims, LambdaProfile

SEED_ENV_VAR = "SUBSPACE_UQ_SEED"
DEFAULT_SEED = 0
MAX_SERIES_CHECK_DIM = 200


def parse_lambda_grid(text: str) -> tuple[float, ...]:
    """
    "start:stop:step" with both ends included, a comma separated list like
    "30,60,120", or a single value.

    Raises:
        InvalidArgumentError: Malformed grid
    """
    separator = "," if "," in text else ":"
    try:
        numbers = [float(part) for part in text.strip().split(separator)]
    except ValueError as e:
        raise InvalidArgumentError(f"Invalid lambda grid: {text!r}") from e
    if separator == ",":
        return tuple(numbers)
    match numbers:
        case [value]:
            return (value,)
        case [start, stop, step] if step > 0 and stop >= start:
            count = round((stop - start) / step) + 1
            return tuple(start + index * step for index in range(count))
        case _:
            raise InvalidArgumentError(
                f"Lambda grid must be 'start:stop:step' with step > 0 and "
                f"stop >= start, got {text!r}"
            )


def parse_orders(text: str) -> tuple[BiasOrder, ...]:
    """
    Comma separated bias orders where each item is an integer, an inclusive
    range like "1..4", or "inf". Duplicates are dropped and the result is
    sorted with inf last.

    Raises:
        InvalidArgumentError: Malformed orders
    """
    orders: set[BiasOrder] = set()
    for item in filter(None, (part.strip() for part in text.split(","))):
        if ".." in item:
            low, _, high = item.partition("..")
            try:
                first, last = int(low), int(high)
            except ValueError as e:
                raise InvalidArgumentError(f"Invalid order range: {item!r}") from e
            if first > last:
                raise InvalidArgumentError(f"Empty order range: {item!r}")
            orders.update(BiasOrder(k) for k in range(first, last + 1))
        else:
            orders.add(BiasOrder.parse(item))
    if not orders:
        raise InvalidArgumentError("At least one bias order is needed")
    return tuple(sorted(orders, key=BiasOrder.sort_key))


def parse_alphas(text: str) -> tuple[float, ...]:
    """
    Raises:
        InvalidArgumentError: Malformed list or a level outside (0, 1)
    """
    try:
        alphas = tuple(
            float(part) for part in text.split(",") if part.strip()
        )
    except ValueError as e:
        raise InvalidArgumentError(f"Invalid alpha list: {text!r}") from e
    if not alphas:
        raise InvalidArgumentError("At least one alpha is needed")
    for alpha in alphas:
        if not 0 < alpha < 1:
            raise InvalidArgumentError(f"alpha must be in (0, 1), got {alpha}")
    return alphas


def resolve_seed(seed: int | None) -> int:
    """
    `seed` if set, then the SUBSPACE_UQ_SEED environment variable, then 0.

    Raises:
        InvalidArgumentError: The environment variable isn't an integer
    """
    if seed is not None:
        return seed
    env_value = os.environ.get(SEED_ENV_VAR)
    if env_value is None or not env_value.strip():
        return DEFAULT_SEED
    try:
        return int(env_value)
    except ValueError as e:
        raise InvalidArgumentError(
            f"{SEED_ENV_VAR} must be an integer, got {env_value!r}"
        ) from e


@attrs.frozen(kw_only=True)
class ModelSection:
    d1: int = config_field(default=100, help="Number of rows of the signal matrix")
    d2: int = config_field(default=100, help="Number of columns of the signal matrix")
    r: int = config_field(default=6, help="Rank of the signal")
    lambda_profile: LambdaProfile = config_field(
        default=LambdaProfile.GEOMETRIC,
        help=(
            "How singular values are derived from a signal strength λ "
            "(geometric: λ·2^(r-i), flat: all equal to λ)"
        ),
    )
    lambda_values: tuple[float, ...] | None = config_field(
        default=None,
        help="Explicit non-increasing singular values. Overrides the profile",
    )
    orientation_seed: int | None = config_field(
        default=None,
        help="Seed for the singular vectors. The study seed is used when unset",
    )
    noise_sigma: float = config_field(default=1.0, help="Noise standard deviation")

    def dims(self) -> Dims:
        """
        Raises:
            InvalidArgumentError: Invalid dimensions
        """
        return Dims(d1=self.d1, d2=self.d2, r=self.r)


@attrs.frozen(kw_only=True)
class BiasTableSection:
    lambda_grid: str = config_field(
        default="30:40:0.5",
        help="Signal strengths, as 'start:stop:step', 'a,b,c' or a single value",
    )
    orders: str = config_field(
        default="1..4",
        help="Bias orders, e.g. '1..4' or '1,2,inf'. inf is always included",
    )
    reps: int = config_field(default=500, help="Replicates per signal strength")


@attrs.frozen(kw_only=True)
class CltSection:
    lambda_value: float = config_field(default=35.0, help="Signal strength λ")
    estimator: LambdaKind = config_field(
        default=LambdaKind.SHRUNK,
        help="Singular values plugged into the bias and normalizer",
    )
    order: BiasOrder = config_field(
        default=BiasOrder(1), help="Bias order, an integer or inf"
    )
    reps: int = config_field(default=3000, help="Number of replicates")


@attrs.frozen(kw_only=True)
class CoverageSection:
    lambda_value: float = config_field(default=50.0, help="Signal strength λ")
    alphas: tuple[float, ...] = config_field(
        default=(0.05, 0.1), help="Nominal non-coverage levels"
    )
    estimator: LambdaKind = config_field(
        default=LambdaKind.TRUE,
        help="Singular values plugged into the bias and normalizer",
    )
    order: BiasOrder | None = config_field(
        default=None,
        help="Bias order, an integer or inf. ⌈log d_max⌉ when unset",
    )
    reps: int = config_field(default=2000, help="Number of replicates")


@attrs.frozen(kw_only=True)
class SeriesSection:
    d1: int = config_field(default=20, help="Number of rows of the signal matrix")
    d2: int = config_field(default=20, help="Number of columns of the signal matrix")
    r: int = config_field(default=3, help="Rank of the signal")
    lambda_value: float = config_field(
        default=2.0, help="Smallest singular value. The profile gives the others"
    )
    noise_ratio: float = config_field(
        default=0.1, help="Noise operator norm as a fraction of λ_r"
    )
    max_order: int = config_field(default=8, help="Highest series order checked")
    seeds: int = config_field(default=20, help="Number of noise draws")


@attrs.frozen(kw_only=True)
class StudyConfig(Config):
    seed: int | None = config_field(
        default=None,
        help=(
            f"Master seed. Falls back to the {SEED_ENV_VAR} environment "
            f"variable, then {DEFAULT_SEED}"
        ),
    )
    workers: int = config_field(
        default=1, help="Worker threads. Results don't depend on it"
    )
    output_directory: Path = config_field(
        default=Path(), help="Directory result files are written to"
    )
    model: ModelSection = config_field(factory=ModelSection)
    bias_table: BiasTableSection = config_field(factory=BiasTableSection)
    clt: CltSection = config_field(factory=CltSection)
    coverage: CoverageSection = config_field(factory=CoverageSection)
    series: SeriesSection = config_field(factory=SeriesSection)

    @override
    @staticmethod
    def get_config_version() -> Version:
        return Version("1.0")

    @override
    @staticmethod
    def get_config_file_description() -> str:
        return f"{__title__} study config. Command line options take precedence."

    def _experiment(
        self,
        kind: ExperimentKind,
        *,
        lambda_base: float,
        replicates: int,
        estimator: LambdaKind = LambdaKind.TRUE,
        orders: tuple[BiasOrder, ...] = (BiasOrder(1),),
        alphas: tuple[float, ...] = (),
    ) -> ExperimentConfig:
        return ExperimentConfig(
            kind=kind,
            dims=self.model.dims(),
            lambda_base=lambda_base,
            profile=self.model.lambda_profile,
            lambda_values=self.model.lambda_values,
            replicates=replicates,
            seed=resolve_seed(self.seed),
            orientation_seed=self.model.orientation_seed,
            estimator=estimator,
            orders=orders,
            alphas=alphas,
            noise_sigma=self.model.noise_sigma,
        )

    def bias_table_experiment(self) -> tuple[ExperimentConfig, tuple[float, ...]]:
        """
        Raises:
            InvalidArgumentError: Invalid settings
        """
        grid = parse_lambda_grid(self.bias_table.lambda_grid)
        config = self._experiment(
            ExperimentKind.BIAS_APPROX,
            lambda_base=grid[0],
            replicates=self.bias_table.reps,
            orders=parse_orders(self.bias_table.orders),
        )
        return config, grid

    def clt_experiment(self) -> ExperimentConfig:
        """
        Raises:
            InvalidArgumentError: Invalid settings
        """
        return self._experiment(
            ExperimentKind.CLT_HISTOGRAM,
            lambda_base=self.clt.lambda_value,
            replicates=self.clt.reps,
            estimator=self.clt.estimator,
            orders=(self.clt.order,),
        )

    def coverage_experiment(self) -> ExperimentConfig:
        """
        Raises:
            InvalidArgumentError: Invalid settings
        """
        dims = self.model.dims()
        order = (
            BiasOrder(default_bias_order(dims))
            if self.coverage.order is None
            else self.coverage.order
        )
        return self._experiment(
            ExperimentKind.COVERAGE,
            lambda_base=self.coverage.lambda_value,
            replicates=self.coverage.reps,
            estimator=self.coverage.estimator,
            orders=(order,),
            alphas=self.coverage.alphas,
        )

    def series_experiment(self) -> ExperimentConfig:
        """
        Raises:
            InvalidArgumentError: Invalid settings, including d1 + d2 above
                the dense eigensolver limit
        """
        series = self.series
        if series.d1 + series.d2 > MAX_SERIES_CHECK_DIM:
            raise InvalidArgumentError(
                f"Series check needs d1 + d2 <= {MAX_SERIES_CHECK_DIM}, got "
                f"{series.d1 + series.d2}"
            )
        return ExperimentConfig(
            kind=ExperimentKind.SERIES_CHECK,
            dims=Dims(d1=series.d1, d2=series.d2, r=series.r),
            lambda_base=series.lambda_value,
            profile=self.model.lambda_profile,
            replicates=series.seeds,
            seed=resolve_seed(self.seed),
            orientation_seed=self.model.orientation_seed,
        )
