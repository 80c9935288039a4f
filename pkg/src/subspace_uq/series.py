"""
Exact perturbation series of the spectral projector of a symmetric dilation.

For ‖X‖ < λ_r/2,

    Θ̂Θ̂ᵀ - ΘΘᵀ = Σ_{k≥1} S_k(X),
    S_k(X) = Σ_s (-1)^(1+τ(s)) 𝔓^(-s₁) X 𝔓^(-s₂) X ⋯ X 𝔓^(-s_{k+1}),

where s runs over the weak compositions of k into k+1 parts, τ(s) counts the
positive parts and 𝔓⁰ is 𝔓^⊥. Throughout this module the noise is passed as
the d1×d2 matrix Z and X is its dilation.
"""

import itertools
import logging
import math
from collections.abc import Iterator

import attrs
import numpy as np
import scipy.linalg

from .bias import default_bias_order
from .errors import InvalidArgumentError, PreconditionViolationError
from .model import FloatArray, SymmetricDilation, dilate_noise

logger = logging.getLogger(__name__)

MAX_ENUMERATION_ORDER = 30
MAX_EVALUATION_ORDER = 12


@attrs.frozen
class Composition:
    s: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.s) - 1

    @property
    def tau(self) -> int:
        return sum(1 for part in self.s if part > 0)

    @property
    def sign(self) -> int:
        return 1 if self.tau % 2 == 1 else -1


def _check_enumeration_order(k: int) -> None:
    if not 1 <= k <= MAX_ENUMERATION_ORDER:
        raise InvalidArgumentError(
            f"Series order must be in [1, {MAX_ENUMERATION_ORDER}], got {k}"
        )


def iter_compositions(k: int) -> Iterator[Composition]:
    """
    Weak compositions of `k` into `k + 1` parts in lexicographic order.

    Raises:
        InvalidArgumentError: `k` outside [1, 30]
    """
    _check_enumeration_order(k)
    # Stars and bars: k bars among 2k slots. Increasing bar positions give
    # lexicographically increasing compositions.
    slots = 2 * k
    for bars in itertools.combinations(range(slots), k):
        parts = [bars[0]]
        parts.extend(bars[i] - bars[i - 1] - 1 for i in range(1, k))
        parts.append(slots - 1 - bars[-1])
        yield Composition(s=tuple(parts))


def enumerate_compositions(k: int) -> list[Composition]:
    """
    All C(2k, k) compositions indexing the terms of S_k.

    Raises:
        InvalidArgumentError: `k` outside [1, 30]
    """
    return list(iter_compositions(k))


def composition_count(k: int) -> int:
    return math.comb(2 * k, k)


@attrs.frozen
class SeriesTerm:
    composition: Composition
    value: FloatArray = attrs.field(eq=False, repr=False)


def _apply_noise(noise: FloatArray, values: FloatArray) -> FloatArray:
    """X·values without forming the dilation of `noise`"""
    d1 = noise.shape[0]
    return np.concatenate([noise @ values[d1:], noise.T @ values[:d1]])


def noise_norm(noise: FloatArray) -> float:
    """‖X‖ = ‖Z‖, the spectral norm"""
    return float(np.linalg.norm(noise, ord=2))


def check_snr(dilation: SymmetricDilation, noise: FloatArray) -> float:
    """
    Returns the noise spectral norm.

    Raises:
        PreconditionViolationError: ‖X‖ ≥ λ_r/2
    """
    if noise.shape != (dilation.dims.d1, dilation.dims.d2):
        raise InvalidArgumentError(
            f"Noise shape {noise.shape} doesn't match the dilation dims"
        )
    norm = noise_norm(noise)
    lambda_r = float(dilation.lambdas[-1])
    if not norm < lambda_r / 2:
        raise PreconditionViolationError(noise_norm=norm, lambda_r=lambda_r)
    return norm


def series_term(
    dilation: SymmetricDilation,
    noise: FloatArray,
    composition: Composition,
    block: FloatArray | None = None,
) -> SeriesTerm:
    """
    Signed term of `composition`, applied right to left onto `block`
    (the identity when omitted).
    """
    parts = composition.s
    start = np.eye(dilation.dims.d) if block is None else block
    value = dilation.apply_power(parts[-1], start)
    for part in reversed(parts[:-1]):
        value = dilation.apply_power(part, _apply_noise(noise, value))
    return SeriesTerm(composition=composition, value=composition.sign * value)


def _series_orders(
    dilation: SymmetricDilation,
    noise: FloatArray,
    max_order: int,
    block: FloatArray,
) -> list[FloatArray]:
    """
    [S_1·block, …, S_K·block] in one pass.

    With Q₀ = 𝔓^⊥ and Q_s = -𝔓^(-s), each signed term is -Q_{s₁}XQ_{s₂}⋯. Let
    W_m(n) sum Q_{s₁}X⋯XQ_{s_m}·block over s₁+…+s_m = n. Then
    W_1(n) = Q_n·block, W_m(n) = Σ_s Q_s·X·W_{m-1}(n-s) and S_k = -W_{k+1}(k).
    """

    def q(power: int, values: FloatArray) -> FloatArray:
        applied = dilation.apply_power(power, values)
        return applied if power == 0 else -applied

    previous = [q(n, block) for n in range(max_order + 1)]
    orders: list[FloatArray] = []
    for m in range(2, max_order + 2):
        noise_applied = [_apply_noise(noise, w) for w in previous]
        current = []
        for n in range(max_order + 1):
            total = q(0, noise_applied[n])
            for power in range(1, n + 1):
                total += q(power, noise_applied[n - power])
            current.append(total)
        previous = current
        orders.append(-previous[m - 1])
    return orders


def eval_S_k(  # noqa: N802
    dilation: SymmetricDilation, noise: FloatArray, k: int
) -> FloatArray:
    """
    Dense S_k(X).

    Raises:
        InvalidArgumentError: `k` outside [1, 30]
        PreconditionViolationError: ‖X‖ ≥ λ_r/2
    """
    _check_enumeration_order(k)
    check_snr(dilation, noise)
    return _series_orders(dilation, noise, k, np.eye(dilation.dims.d))[k - 1]


def _check_evaluation_order(max_order: int) -> None:
    if not 1 <= max_order <= MAX_EVALUATION_ORDER:
        raise InvalidArgumentError(
            f"Truncation order must be in [1, {MAX_EVALUATION_ORDER}], got {max_order}"
        )


def truncated_projector_delta(
    dilation: SymmetricDilation, noise: FloatArray, max_order: int | None = None
) -> FloatArray:
    """
    Σ_{k≤K} S_k(X), the order-K approximation of Θ̂Θ̂ᵀ - ΘΘᵀ.

    Raises:
        InvalidArgumentError: `max_order` outside [1, 12]
        PreconditionViolationError: ‖X‖ ≥ λ_r/2
    """
    max_order = default_bias_order(dilation.dims) if max_order is None else max_order
    _check_evaluation_order(max_order)
    check_snr(dilation, noise)
    orders = _series_orders(dilation, noise, max_order, np.eye(dilation.dims.d))
    return np.sum(orders, axis=0)


def truncated_projector_deltas(
    dilation: SymmetricDilation, noise: FloatArray, max_order: int
) -> list[FloatArray]:
    """Partial sums for every K in 1..`max_order`"""
    _check_evaluation_order(max_order)
    check_snr(dilation, noise)
    orders = _series_orders(dilation, noise, max_order, np.eye(dilation.dims.d))
    return list(itertools.accumulate(orders))


@attrs.frozen
class Dist2Decomposition:
    leading: float
    tail: float

    @property
    def total(self) -> float:
        return self.leading + self.tail


def dist2_series_decomposition(
    dilation: SymmetricDilation, noise: FloatArray, max_order: int | None = None
) -> Dist2Decomposition:
    """
    dist² ≈ 2‖𝔓^⊥X𝔓^(-1)‖_F² - 2Σ_{k=3}^{K}⟨ΘΘᵀ, S_k(X)⟩.

    Raises:
        InvalidArgumentError: `max_order` outside [1, 12]
        PreconditionViolationError: ‖X‖ ≥ λ_r/2
    """
    max_order = default_bias_order(dilation.dims) if max_order is None else max_order
    _check_evaluation_order(max_order)
    check_snr(dilation, noise)
    theta = dilation.theta
    # 𝔓^(-1) = 𝔓^(-1)ΘΘᵀ and Θ has orthonormal columns, so the norm can be
    # taken on the thin block 𝔓^⊥X𝔓^(-1)Θ.
    leading_block = dilation.apply_power(
        0, _apply_noise(noise, dilation.apply_power(1, theta))
    )
    leading = 2 * float(np.sum(leading_block**2))
    tail = 0.0
    if max_order >= 3:
        orders = _series_orders(dilation, noise, max_order, theta)
        inner_products = [float(np.sum(theta * order)) for order in orders[2:]]
        tail = -2 * math.fsum(inner_products)
    return Dist2Decomposition(leading=leading, tail=tail)


def _geometric_tail(ratio: float, max_order: int) -> float:
    """Σ_{k>K} ratio^k"""
    if ratio >= 1:
        return math.inf
    return ratio ** (max_order + 1) / (1 - ratio)


def projector_tail_bound(
    noise_norm: float, lambda_r: float, max_order: int, r: int
) -> float:
    """Frobenius bound 2r·Σ_{k>K}(4‖X‖/λ_r)^k on the truncation error"""
    return 2 * r * _geometric_tail(4 * noise_norm / lambda_r, max_order)


def dist2_tail_bound(noise_norm: float, lambda_r: float, max_order: int, r: int) -> float:
    """Bound 4r·Σ_{k>K}(4‖X‖/λ_r)^k on the dist² decomposition error"""
    return 4 * r * _geometric_tail(4 * noise_norm / lambda_r, max_order)


def eigen_projector_delta(dilation: SymmetricDilation, noise: FloatArray) -> FloatArray:
    """
    Θ̂Θ̂ᵀ - ΘΘᵀ from a dense eigendecomposition of A + X. The 2r eigenvalues
    largest in magnitude span Θ̂.
    """
    perturbed = dilation.matrix() + dilate_noise(noise)
    eigenvalues, eigenvectors = scipy.linalg.eigh(perturbed)
    top = np.argsort(-np.abs(eigenvalues), kind="stable")[: 2 * dilation.dims.r]
    theta_hat = eigenvectors[:, top]
    return theta_hat @ theta_hat.T - dilation.signal_projector()
