"""
Closed-form approximations of E dist² and the CLT normalizer.

The order-k approximation is

    B_k = 2d⋆‖Λ⁻¹‖_F² - 2 Σ_{k₀=2}^{k} (-1)^k₀ (d1m^(k₀-1) - d2m^(k₀-1))(d1m - d2m) ‖Λ^(-k₀)‖_F²

and B_∞ is its closed-form limit. Every correction carries the factor
d1m - d2m, so all orders agree when d1 = d2.
"""

import logging
import math
from collections.abc import Sequence
from enum import StrEnum
from typing import ClassVar, Self, assert_never, override

import attrs
import numpy as np

from .errors import InvalidArgumentError
from .model import Dims, FloatArray, frozen_array

logger = logging.getLogger(__name__)


class LambdaKind(StrEnum):
    """
    - true: The model's singular values.
    - empirical: Top-r singular values of the observed matrix.
    - shrunk: Empirical singular values corrected for noise inflation.
    """

    TRUE = "true"
    EMPIRICAL = "empirical"
    SHRUNK = "shrunk"


def _valid_converter(valid: Sequence[bool] | None) -> tuple[bool, ...] | None:
    return None if valid is None else tuple(bool(flag) for flag in valid)


@attrs.frozen
class SingularValueEstimate:
    """
    Singular values plugged into the bias and normalizer formulas. Shrunk
    estimates carry one validity flag per entry. An invalid entry was below the
    detectability edge and holds the empirical value instead.
    """

    kind: LambdaKind
    values: FloatArray = attrs.field(converter=frozen_array, eq=False)
    valid: tuple[bool, ...] | None = attrs.field(
        default=None, converter=_valid_converter
    )

    def __attrs_post_init__(self) -> None:
        if self.values.ndim != 1 or not np.all(self.values > 0):
            raise InvalidArgumentError("Singular value estimates must be positive")
        if self.valid is not None and len(self.valid) != len(self.values):
            raise InvalidArgumentError("One validity flag is needed per value")

    @property
    def all_valid(self) -> bool:
        return self.valid is None or all(self.valid)

    @property
    def invalid_count(self) -> int:
        return 0 if self.valid is None else self.valid.count(False)


@attrs.frozen
class BiasOrder:
    """Order of a bias approximation. `k` is None for B_∞."""

    k: int | None

    INFINITY_TEXT: ClassVar[str] = "inf"

    def __attrs_post_init__(self) -> None:
        if self.k is not None and self.k < 1:
            raise InvalidArgumentError(f"Bias order must be at least 1, got {self.k}")

    @classmethod
    def infinity(cls) -> Self:
        return cls(None)

    @classmethod
    def parse(cls, text: str) -> Self:
        """
        Raises:
            InvalidArgumentError: `text` is neither "inf" nor a positive integer
        """
        cleaned = text.strip().lower()
        if cleaned in (cls.INFINITY_TEXT, "infinity", "∞"):
            return cls.infinity()
        try:
            return cls(int(cleaned))
        except ValueError as e:
            raise InvalidArgumentError(f"Invalid bias order: {text!r}") from e

    @property
    def is_infinite(self) -> bool:
        return self.k is None

    def sort_key(self) -> float:
        return math.inf if self.k is None else self.k

    @override
    def __str__(self) -> str:
        return self.INFINITY_TEXT if self.k is None else str(self.k)


LambdaLike = SingularValueEstimate | Sequence[float] | FloatArray


def default_bias_order(dims: Dims) -> int:
    """⌈log d_max⌉, natural log, never below 1"""
    return max(1, math.ceil(math.log(dims.d_max)))


def _as_values(lambdas: LambdaLike) -> FloatArray:
    if isinstance(lambdas, SingularValueEstimate):
        return lambdas.values
    values = np.asarray(lambdas, dtype=np.float64)
    if values.ndim != 1 or not np.all(values > 0):
        raise InvalidArgumentError("Singular values must be positive")
    return values


def inverse_power_norm2(lambdas: LambdaLike, k: int) -> float:
    """
    ‖Λ^(-k)‖_F² = Σ_j λ_j^(-2k). Terms that underflow come out as zero.
    """
    values = _as_values(lambdas)
    return math.fsum(float(value) ** (-2 * k) for value in values)


def bias_k(dims: Dims, lambdas: LambdaLike, k: int) -> float:
    """
    Order-`k` approximation B_k of E dist².

    Raises:
        InvalidArgumentError: `k` < 1 or non-positive singular values
    """
    if k < 1:
        raise InvalidArgumentError(f"Bias order must be at least 1, got {k}")
    values = _as_values(lambdas)
    terms = [2 * dims.d_star * inverse_power_norm2(values, 1)]
    delta = dims.d1m - dims.d2m
    if delta != 0:
        for k0 in range(2, k + 1):
            # (d1m^(k₀-1) - d2m^(k₀-1))·λ^(-2k₀) in ratio form, which can't overflow
            correction = math.fsum(
                (
                    (dims.d1m / value**2) ** (k0 - 1)
                    - (dims.d2m / value**2) ** (k0 - 1)
                )
                / value**2
                for value in map(float, values)
            )
            terms.append(-2 * (-1) ** k0 * delta * correction)
    return math.fsum(terms)


def bias_infinity_sides(dims: Dims, lambdas: LambdaLike) -> tuple[float, float]:
    """
    Closed-form limits of E‖ÛÛᵀ - UUᵀ‖_F² and E‖V̂V̂ᵀ - VVᵀ‖_F². They add up
    to B_∞.
    """
    values = [float(value) ** 2 for value in _as_values(lambdas)]
    d1m, d2m = dims.d1m, dims.d2m
    left = math.fsum(
        2 * d1m * (value + d2m) / (value * (value + d1m)) for value in values
    )
    right = math.fsum(
        2 * d2m * (value + d1m) / (value * (value + d2m)) for value in values
    )
    return left, right


def bias_infinity(dims: Dims, lambdas: LambdaLike) -> float:
    return math.fsum(bias_infinity_sides(dims, lambdas))


def bias_for_order(dims: Dims, lambdas: LambdaLike, order: BiasOrder) -> float:
    if order.k is None:
        return bias_infinity(dims, lambdas)
    return bias_k(dims, lambdas, order.k)


def sigma_normalizer(dims: Dims, lambdas: LambdaLike) -> float:
    """σ = √(8d⋆)·‖Λ⁻²‖_F"""
    return math.sqrt(8 * dims.d_star) * math.sqrt(inverse_power_norm2(lambdas, 2))


def inflated_singular_values(
    dims: Dims, lambdas: Sequence[float] | FloatArray
) -> FloatArray:
    """
    Noiseless fixed point λ̂² = λ² + (d1 + d2) + d1·d2/λ² that shrinkage
    inverts.
    """
    squared = np.asarray(lambdas, dtype=np.float64) ** 2
    return np.sqrt(squared + (dims.d1 + dims.d2) + dims.d1 * dims.d2 / squared)


def detectability_edge(dims: Dims) -> float:
    """Smallest λ̂ for which shrinkage has a real solution"""
    return math.sqrt(dims.d1 + dims.d2 + 2 * math.sqrt(dims.d1 * dims.d2))


def shrink_singular_values(
    dims: Dims, lambda_hat: Sequence[float] | FloatArray
) -> SingularValueEstimate:
    """
    Shrinkage estimate λ̃² = (a + √(a² - 4d1d2))/2 with a = λ̂² - (d1 + d2).
    Entries below the detectability edge are flagged invalid and keep λ̂.
    """
    values = np.asarray(lambda_hat, dtype=np.float64)
    if np.any(values < 0):
        raise InvalidArgumentError("Empirical singular values must be non-negative")
    edge_half_width = 2 * math.sqrt(dims.d1 * dims.d2)
    shrunk = np.empty_like(values)
    valid: list[bool] = []
    for index, value in enumerate(map(float, values)):
        a = value**2 - (dims.d1 + dims.d2)
        lower = a - edge_half_width
        if lower < 0:
            logger.debug(
                "λ̂_%d = %.6g is below the detectability edge", index + 1, value
            )
            shrunk[index] = value
            valid.append(False)
            continue
        # (a - 2g)(a + 2g) rather than a² - 4g², which cancels near the edge
        discriminant = lower * (a + edge_half_width)
        shrunk[index] = math.sqrt((a + math.sqrt(discriminant)) / 2)
        valid.append(True)
    return SingularValueEstimate(kind=LambdaKind.SHRUNK, values=shrunk, valid=valid)


def estimate_singular_values(
    kind: LambdaKind,
    dims: Dims,
    *,
    true_values: Sequence[float] | FloatArray,
    lambda_hat: Sequence[float] | FloatArray,
) -> SingularValueEstimate:
    match kind:
        case LambdaKind.TRUE:
            return SingularValueEstimate(kind=kind, values=true_values)
        case LambdaKind.EMPIRICAL:
            return SingularValueEstimate(kind=kind, values=lambda_hat)
        case LambdaKind.SHRUNK:
            return shrink_singular_values(dims, lambda_hat)
        case _:
            assert_never(kind)


@attrs.frozen
class BiasLadder:
    dims: Dims
    estimate: SingularValueEstimate
    orders: dict[int, float]
    b_infinity: float
    sigma: float

    def value(self, order: BiasOrder) -> float:
        """
        Raises:
            KeyError: The ladder wasn't built up to `order`
        """
        if order.k is None:
            return self.b_infinity
        return self.orders[order.k]


def bias_ladder(dims: Dims, estimate: SingularValueEstimate, max_order: int) -> BiasLadder:
    """B_1…B_K, B_∞ and σ for one set of singular values"""
    return BiasLadder(
        dims=dims,
        estimate=estimate,
        orders={k: bias_k(dims, estimate, k) for k in range(1, max_order + 1)},
        b_infinity=bias_infinity(dims, estimate),
        sigma=sigma_normalizer(dims, estimate),
    )
