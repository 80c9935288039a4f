"""Projection distance, the CLT statistic and confidence regions."""

import logging
import math
from typing import Self

import attrs
import numpy as np
import scipy.special

from .bias import (
    BiasOrder,
    LambdaKind,
    SingularValueEstimate,
    bias_for_order,
    default_bias_order,
    sigma_normalizer,
)
from .errors import InvalidArgumentError
from .model import Dims, FloatArray

logger = logging.getLogger(__name__)


def _check_pair(first: FloatArray, second: FloatArray, side: str) -> None:
    if first.ndim != 2 or first.shape != second.shape:
        raise InvalidArgumentError(
            f"{side} bases must have the same shape, got {first.shape} and "
            f"{second.shape}"
        )


def subspace_distance2(first: FloatArray, second: FloatArray) -> float:
    """
    ‖P₁ - P₂‖_F² for the projectors onto the column spans of two orthonormal
    bases, as 2r - 2‖B₁ᵀB₂‖_F².

    Raises:
        InvalidArgumentError: Shape mismatch
    """
    _check_pair(first, second, "Subspace")
    overlap = float(np.sum((first.T @ second) ** 2))
    # Rounding can push the value a hair below zero for identical subspaces
    return max(0.0, 2 * first.shape[1] - 2 * overlap)


def projection_distance2(
    u1: FloatArray, v1: FloatArray, u2: FloatArray, v2: FloatArray
) -> float:
    """
    dist² = ‖U₁U₁ᵀ - U₂U₂ᵀ‖_F² + ‖V₁V₁ᵀ - V₂V₂ᵀ‖_F², computed from r×r Gram
    matrices only.

    Raises:
        InvalidArgumentError: Shape mismatch
    """
    _check_pair(u1, u2, "Left")
    _check_pair(v1, v2, "Right")
    if u1.shape[1] != v1.shape[1]:
        raise InvalidArgumentError("Left and right bases must have the same rank")
    return subspace_distance2(u1, u2) + subspace_distance2(v1, v2)


@attrs.frozen
class CltStatistic:
    """(dist² - bias)/sigma. `degraded` is set when shrinkage failed for some value."""

    dist2: float
    bias: float
    sigma: float
    bias_order: BiasOrder
    lambda_kind: LambdaKind
    degraded: bool = False

    @property
    def value(self) -> float:
        return (self.dist2 - self.bias) / self.sigma


def clt_statistic(
    dist2: float,
    dims: Dims,
    lambda_estimate: SingularValueEstimate,
    bias_order: BiasOrder,
) -> CltStatistic:
    """
    Raises:
        InvalidArgumentError: The normalizer isn't positive, i.e. d⋆ = 0
    """
    sigma = sigma_normalizer(dims, lambda_estimate)
    if not sigma > 0:
        raise InvalidArgumentError(f"CLT normalizer must be positive, got {sigma}")
    return CltStatistic(
        dist2=dist2,
        bias=bias_for_order(dims, lambda_estimate, bias_order),
        sigma=sigma,
        bias_order=bias_order,
        lambda_kind=lambda_estimate.kind,
        degraded=not lambda_estimate.all_valid,
    )


def std_normal_cdf(x: float) -> float:
    """Φ(x)"""
    return float(scipy.special.ndtr(x))


def std_normal_quantile(p: float) -> float:
    """
    Φ⁻¹(p)

    Raises:
        InvalidArgumentError: `p` outside (0, 1)
    """
    if not 0 < p < 1:
        raise InvalidArgumentError(f"Quantile level must be in (0, 1), got {p}")
    return float(scipy.special.ndtri(p))


def upper_quantile(alpha: float) -> float:
    """z_α = Φ⁻¹(1 - α)"""
    return -std_normal_quantile(alpha)


@attrs.frozen
class ConfidenceRegionSpec:
    """
    Confidence region {(L, R) : |dist²[(L, R), center] - B| ≤ σ·z_(α/2)}.
    `bias_order` None means the default order ⌈log d_max⌉.
    """

    alpha: float = attrs.field()
    bias_order: BiasOrder | None = None

    @alpha.validator
    def _check_alpha(self, attribute: "attrs.Attribute[float]", value: float) -> None:
        if not 0 < value < 1:
            raise InvalidArgumentError(f"alpha must be in (0, 1), got {value}")

    def resolved_order(self, dims: Dims) -> BiasOrder:
        return self.bias_order or BiasOrder(default_bias_order(dims))

    def with_order(self, bias_order: BiasOrder) -> Self:
        return attrs.evolve(self, bias_order=bias_order)


@attrs.frozen
class RegionMembership:
    contained: bool
    margin: float
    radius: float
    deviation: float


def region_radius(dims: Dims, lambda_estimate: SingularValueEstimate, alpha: float) -> float:
    return sigma_normalizer(dims, lambda_estimate) * upper_quantile(alpha / 2)


def confidence_region_contains(
    candidate: tuple[FloatArray, FloatArray],
    center: tuple[FloatArray, FloatArray],
    dims: Dims,
    lambda_estimate: SingularValueEstimate,
    spec: ConfidenceRegionSpec,
) -> RegionMembership:
    """
    Whether `candidate` lies in the region around `center`. The margin is
    radius - |dist² - B| and is non-negative exactly when the candidate is
    contained.

    Raises:
        InvalidArgumentError: Shape mismatch
    """
    dist2 = projection_distance2(candidate[0], candidate[1], center[0], center[1])
    bias = bias_for_order(dims, lambda_estimate, spec.resolved_order(dims))
    radius = region_radius(dims, lambda_estimate, spec.alpha)
    deviation = dist2 - bias
    margin = radius - abs(deviation)
    return RegionMembership(
        contained=margin >= 0, margin=margin, radius=radius, deviation=deviation
    )


def coverage_se(hits: int, total: int) -> float:
    """√(p̂(1 - p̂)/n)"""
    if total == 0:
        return math.nan
    p = hits / total
    return math.sqrt(p * (1 - p) / total)
