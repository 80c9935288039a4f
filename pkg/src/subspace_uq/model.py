"""
Ground-truth low-rank models, Gaussian noise and the symmetric dilation.

The dilation of a d1×d2 matrix M = UΛVᵀ is the (d1+d2)×(d1+d2) symmetric
matrix A = [[0, M], [Mᵀ, 0]]. Its nonzero eigenvalues are ±λᵢ with
eigenvectors (uᵢ; ±vᵢ)/√2. Everything downstream works with spectral
projectors of A, which only ever need U, V and λ.
"""

import logging
import math
from collections.abc import Sequence
from enum import StrEnum
from typing import Self, assert_never

import attrs
import numpy as np
import scipy.linalg
from numpy.typing import NDArray
from scipy.sparse.linalg import LinearOperator

from .errors import InvalidArgumentError, NumericalFailureError
from .rng import StreamDomain, stream_generator

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


def frozen_array(values: Sequence[float] | FloatArray) -> FloatArray:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


@attrs.frozen
class Dims:
    d1: int
    d2: int
    r: int

    def __attrs_post_init__(self) -> None:
        if self.d1 < 1 or self.d2 < 1:
            raise InvalidArgumentError(
                f"Dimensions must be positive, got d1={self.d1}, d2={self.d2}"
            )
        if not 1 <= self.r <= min(self.d1, self.d2):
            raise InvalidArgumentError(
                f"Rank must be in [1, {min(self.d1, self.d2)}], got r={self.r}"
            )

    @property
    def d(self) -> int:
        """Size of the dilation"""
        return self.d1 + self.d2

    @property
    def d_max(self) -> int:
        return max(self.d1, self.d2)

    @property
    def d_star(self) -> int:
        return self.d1 + self.d2 - 2 * self.r

    @property
    def d1m(self) -> int:
        return self.d1 - self.r

    @property
    def d2m(self) -> int:
        return self.d2 - self.r

    @property
    def delta_d(self) -> int:
        return self.d1 - self.d2

    def swapped(self) -> Self:
        return type(self)(d1=self.d2, d2=self.d1, r=self.r)


def validate_singular_values(lambdas: Sequence[float] | FloatArray, r: int) -> FloatArray:
    """
    Raises:
        InvalidArgumentError: Wrong length, non-positive or not non-increasing
    """
    values = np.asarray(lambdas, dtype=np.float64)
    if values.shape != (r,):
        raise InvalidArgumentError(f"Expected {r} singular values, got {values.shape}")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise InvalidArgumentError("Singular values must be finite and positive")
    if np.any(np.diff(values) > 0):
        raise InvalidArgumentError("Singular values must be non-increasing")
    return values


class LambdaProfile(StrEnum):
    """
    - geometric: λᵢ = 2^(r-i)·λ, so λ_r = λ and λ₁ = 2^(r-1)·λ.
    - flat: Every singular value equals λ.
    """

    GEOMETRIC = "geometric"
    FLAT = "flat"


def profile_singular_values(profile: LambdaProfile, r: int, base: float) -> FloatArray:
    """Singular values of a study model with signal strength `base`"""
    match profile:
        case LambdaProfile.GEOMETRIC:
            return base * np.exp2(np.arange(r - 1, -1, -1, dtype=np.float64))
        case LambdaProfile.FLAT:
            return np.full(r, base, dtype=np.float64)
        case _:
            assert_never(profile)


@attrs.frozen
class LowRankModel:
    """M = U·diag(lambdas)·Vᵀ with orthonormal U and V"""

    dims: Dims
    u: FloatArray = attrs.field(converter=frozen_array, eq=False, repr=False)
    v: FloatArray = attrs.field(converter=frozen_array, eq=False, repr=False)
    lambdas: FloatArray = attrs.field(converter=frozen_array, eq=False)

    def __attrs_post_init__(self) -> None:
        if self.u.shape != (self.dims.d1, self.dims.r) or self.v.shape != (
            self.dims.d2,
            self.dims.r,
        ):
            raise InvalidArgumentError("Singular vector shapes don't match dims")
        validate_singular_values(self.lambdas, self.dims.r)

    def signal(self) -> FloatArray:
        return (self.u * self.lambdas) @ self.v.T


@attrs.frozen
class ObservedMatrix:
    values: FloatArray = attrs.field(converter=frozen_array, eq=False)

    def __attrs_post_init__(self) -> None:
        if self.values.ndim != 2:
            raise InvalidArgumentError("Observed matrix must be two dimensional")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("Observed matrix has non-finite entries")


@attrs.frozen
class EmpiricalSVD:
    u_hat: FloatArray = attrs.field(converter=frozen_array, eq=False, repr=False)
    v_hat: FloatArray = attrs.field(converter=frozen_array, eq=False, repr=False)
    lambda_hat: FloatArray = attrs.field(converter=frozen_array, eq=False)

    @property
    def dims(self) -> Dims:
        return Dims(d1=self.u_hat.shape[0], d2=self.v_hat.shape[0], r=self.u_hat.shape[1])


@attrs.frozen
class NoiseSpec:
    seed: int
    stream: int = 0
    sigma: float = attrs.field(default=1.0)

    @sigma.validator
    def _check_sigma(self, attribute: "attrs.Attribute[float]", value: float) -> None:
        if not value > 0:
            raise InvalidArgumentError(f"Noise sigma must be positive, got {value}")


def sample_noise(dims: Dims, spec: NoiseSpec) -> FloatArray:
    """
    d1×d2 matrix of i.i.d. N(0, sigma²) entries. The same `(seed, stream)`
    always gives the same matrix, bit for bit.
    """
    generator = stream_generator(spec.seed, StreamDomain.NOISE, spec.stream)
    noise = generator.standard_normal((dims.d1, dims.d2))
    if spec.sigma != 1.0:
        noise *= spec.sigma
    return noise


def make_model(
    dims: Dims, lambdas: Sequence[float] | FloatArray, orientation_seed: int
) -> LowRankModel:
    """
    Model whose singular subspaces are the top-r singular subspaces of a seeded
    d1×d2 Gaussian matrix.

    Raises:
        InvalidArgumentError: `lambdas` isn't a valid singular value list
    """
    values = validate_singular_values(lambdas, dims.r)
    generator = stream_generator(orientation_seed, StreamDomain.ORIENTATION, 0)
    gaussian = generator.standard_normal((dims.d1, dims.d2))
    left, _, right_t = _svd(gaussian)
    return LowRankModel(
        dims=dims, u=left[:, : dims.r], v=right_t[: dims.r].T, lambdas=values
    )


def observe(model: LowRankModel, noise: FloatArray) -> ObservedMatrix:
    """
    Raises:
        InvalidArgumentError: Noise shape doesn't match the model
    """
    if noise.shape != (model.dims.d1, model.dims.d2):
        raise InvalidArgumentError(
            f"Noise shape {noise.shape} doesn't match model "
            f"({model.dims.d1}, {model.dims.d2})"
        )
    return ObservedMatrix(values=model.signal() + noise)


def _svd(matrix: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
    """
    Thin SVD. gesdd is tried first and gesvd is the fallback, since gesdd
    occasionally fails to converge where gesvd doesn't.

    Raises:
        NumericalFailureError: Neither driver converged
    """
    try:
        return scipy.linalg.svd(  # type: ignore[no-any-return]
            matrix, full_matrices=False, lapack_driver="gesdd", check_finite=False
        )
    except np.linalg.LinAlgError:
        logger.debug("gesdd didn't converge. Retrying with gesvd")
    try:
        return scipy.linalg.svd(  # type: ignore[no-any-return]
            matrix, full_matrices=False, lapack_driver="gesvd", check_finite=False
        )
    except np.linalg.LinAlgError as e:
        raise NumericalFailureError("SVD did not converge") from e


def top_r_svd(observed: ObservedMatrix, r: int) -> EmpiricalSVD:
    """
    Raises:
        InvalidArgumentError: `r` exceeds min(d1, d2)
        NumericalFailureError: SVD did not converge
    """
    d1, d2 = observed.values.shape
    if not 1 <= r <= min(d1, d2):
        raise InvalidArgumentError(f"Rank must be in [1, {min(d1, d2)}], got r={r}")
    left, singular_values, right_t = _svd(observed.values)
    return EmpiricalSVD(
        u_hat=left[:, :r], v_hat=right_t[:r].T, lambda_hat=singular_values[:r]
    )


def _scale_rows(weights: FloatArray, values: FloatArray) -> FloatArray:
    if values.ndim == 1:
        return weights * values
    return weights[:, np.newaxis] * values


@attrs.frozen
class SymmetricDilation:
    """
    Dilation A = [[0, M], [Mᵀ, 0]] kept in factored form. `theta` has the
    eigenvectors for (λ₁, …, λ_r, -λ_r, …, -λ₁) as columns.
    """

    dims: Dims
    u: FloatArray = attrs.field(converter=frozen_array, eq=False, repr=False)
    v: FloatArray = attrs.field(converter=frozen_array, eq=False, repr=False)
    lambdas: FloatArray = attrs.field(converter=frozen_array, eq=False)

    @property
    def eigenvalues(self) -> FloatArray:
        return np.concatenate([self.lambdas, -self.lambdas[::-1]])

    @property
    def theta(self) -> FloatArray:
        positive = np.vstack([self.u, self.v]) / math.sqrt(2)
        negative = np.vstack([self.u, -self.v]) / math.sqrt(2)
        return np.hstack([positive, negative[:, ::-1]])

    def matrix(self) -> FloatArray:
        d1 = self.dims.d1
        dense = np.zeros((self.dims.d, self.dims.d))
        signal = (self.u * self.lambdas) @ self.v.T
        dense[:d1, d1:] = signal
        dense[d1:, :d1] = signal.T
        return dense

    def signal_projector(self) -> FloatArray:
        """ΘΘᵀ = UUᵀ ⊕ VVᵀ as a dense matrix"""
        return scipy.linalg.block_diag(  # type: ignore[no-any-return]
            self.u @ self.u.T, self.v @ self.v.T
        )

    def apply_power(self, k: int, values: FloatArray) -> FloatArray:
        """
        Apply 𝔓^(-k) (or 𝔓^⊥ when `k` is 0) to a vector or to each column of a
        matrix.
        """
        d1 = self.dims.d1
        top, bottom = values[:d1], values[d1:]
        u_top = self.u.T @ top
        v_bottom = self.v.T @ bottom
        if k == 0:
            return np.concatenate([top - self.u @ u_top, bottom - self.v @ v_bottom])
        weights = self.lambdas ** (-float(k))
        if k % 2 == 0:
            new_top = self.u @ _scale_rows(weights, u_top)
            new_bottom = self.v @ _scale_rows(weights, v_bottom)
        else:
            new_top = self.u @ _scale_rows(weights, v_bottom)
            new_bottom = self.v @ _scale_rows(weights, u_top)
        return np.concatenate([new_top, new_bottom])


def dilate(source: LowRankModel | EmpiricalSVD) -> SymmetricDilation:
    match source:
        case LowRankModel():
            return SymmetricDilation(
                dims=source.dims, u=source.u, v=source.v, lambdas=source.lambdas
            )
        case EmpiricalSVD():
            return SymmetricDilation(
                dims=source.dims,
                u=source.u_hat,
                v=source.v_hat,
                lambdas=source.lambda_hat,
            )
        case _:
            assert_never(source)


def dilate_noise(noise: FloatArray) -> FloatArray:
    """X = [[0, Z], [Zᵀ, 0]]"""
    d1, d2 = noise.shape
    dilated = np.zeros((d1 + d2, d1 + d2))
    dilated[:d1, d1:] = noise
    dilated[d1:, :d1] = noise.T
    return dilated


@attrs.frozen
class SpectralProjector:
    """
    𝔓^(-k) = Σ_j λ_j^(-k) θ_j θ_jᵀ for k ≥ 1, and 𝔓^⊥ = I - ΘΘᵀ for k = 0.
    Only U, V and λ are stored, so applying it costs O((d1+d2)·r) per
    column.
    """

    dilation: SymmetricDilation
    k: int

    def apply(self, values: FloatArray) -> FloatArray:
        return self.dilation.apply_power(self.k, values)

    def __matmul__(self, values: FloatArray) -> FloatArray:
        return self.apply(values)

    def to_dense(self) -> FloatArray:
        return self.apply(np.eye(self.dilation.dims.d))

    def as_linear_operator(self) -> LinearOperator:
        size = self.dilation.dims.d
        return LinearOperator(
            shape=(size, size),
            matvec=self.apply,
            matmat=self.apply,
            rmatvec=self.apply,
            dtype=np.float64,
        )


def proj_power(dilation: SymmetricDilation, k: int) -> SpectralProjector:
    """
    Raises:
        InvalidArgumentError: `k` is negative
    """
    if k < 0:
        raise InvalidArgumentError(f"Projector power must be non-negative, got {k}")
    return SpectralProjector(dilation=dilation, k=k)
