"""
Random-matrix moments and exact combinatorial identities that the bias
formulas rest on, together with Monte-Carlo estimators to check them.
"""

import itertools
import logging
import math
from collections.abc import Iterator, Sequence
from fractions import Fraction

import attrs
import numpy as np

from .errors import InternalConsistencyError, InvalidArgumentError
from .model import FloatArray
from .rng import StreamDomain, stream_generator

logger = logging.getLogger(__name__)

MAX_IDENTITY_K0 = 25
MAX_EXACT_TRACE_POWER = 7
MC_BATCH_SIZE = 500


@attrs.frozen
class MonteCarloEstimate:
    mean: float
    se: float
    reps: int

    def deviation_in_se(self, reference: float) -> float:
        """|mean - reference| in units of the standard error"""
        if self.se == 0:
            return 0.0 if self.mean == reference else math.inf
        return abs(self.mean - reference) / self.se


def _estimate(samples: FloatArray) -> MonteCarloEstimate:
    reps = len(samples)
    se = float(np.std(samples, ddof=1) / math.sqrt(reps)) if reps > 1 else math.inf
    return MonteCarloEstimate(mean=float(np.mean(samples)), se=se, reps=reps)


def _batches(reps: int) -> Iterator[int]:
    full, rest = divmod(reps, MC_BATCH_SIZE)
    yield from itertools.repeat(MC_BATCH_SIZE, full)
    if rest:
        yield rest


def wishart_frobenius_moment(
    lambdas: Sequence[float] | FloatArray, d: int, j1: int, j2: int
) -> float:
    """
    E‖Λ^(-j1)ZZᵀΛ^(-j2)‖_F² for an r×d matrix Z of i.i.d. N(0, 1):

        d²‖Λ^(-j1-j2)‖_F² + d(‖Λ^(-j1-j2)‖_F² + ‖Λ^(-j1)‖_F²‖Λ^(-j2)‖_F²)

    Raises:
        InvalidArgumentError: `j1`, `j2` or `d` below 1
    """
    if j1 < 1 or j2 < 1 or d < 1:
        raise InvalidArgumentError("j1, j2 and d must all be at least 1")
    values = [float(value) for value in lambdas]

    def norm2(power: int) -> float:
        return math.fsum(value ** (-2 * power) for value in values)

    joint = norm2(j1 + j2)
    return d**2 * joint + d * (joint + norm2(j1) * norm2(j2))


def wishart_frobenius_mc(
    lambdas: Sequence[float] | FloatArray,
    d: int,
    j1: int,
    j2: int,
    *,
    reps: int,
    seed: int,
) -> MonteCarloEstimate:
    left = np.asarray(lambdas, dtype=np.float64) ** (-float(j1))
    right = np.asarray(lambdas, dtype=np.float64) ** (-float(j2))
    generator = stream_generator(seed, StreamDomain.MOMENT_CHECK, 0)
    samples = []
    for batch in _batches(reps):
        gaussian = generator.standard_normal((batch, len(left), d))
        gram = gaussian @ gaussian.transpose(0, 2, 1)
        scaled = left[:, np.newaxis] * gram * right[np.newaxis, :]
        samples.append(np.sum(scaled**2, axis=(1, 2)))
    return _estimate(np.concatenate(samples))


def mp_moment_beta(t: int, d1m: int, d2m: int, lambda_sq: float) -> float:
    """
    β_t = (1 + λ²/(1 + d2m))·(1/(t-1))·Σ_{r=0}^{t-2} d1m^(r+1)(d2m+1)^(t-1-r)C(t-1,r+1)C(t-1,r)

    The sum is the leading-order Marchenko-Pastur value of E tr(W^(t-1)) for
    W = GGᵀ with G a d1m×(d2m+1) Gaussian matrix. It is evaluated exactly
    before scaling.

    Raises:
        InvalidArgumentError: `t` < 2
    """
    if t < 2:
        raise InvalidArgumentError(f"Moment order must be at least 2, got {t}")
    narayana_sum = sum(
        d1m ** (r + 1)
        * (d2m + 1) ** (t - 1 - r)
        * math.comb(t - 1, r + 1)
        * math.comb(t - 1, r)
        for r in range(t - 1)
    )
    scale = 1 + Fraction(lambda_sq) / (1 + d2m)
    return float(Fraction(narayana_sum, t - 1) * scale)


def _perfect_matchings(items: tuple[int, ...]) -> Iterator[list[tuple[int, int]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for index, partner in enumerate(rest):
        remaining = rest[:index] + rest[index + 1 :]
        for matching in _perfect_matchings(remaining):
            yield [(first, partner), *matching]


class _UnionFind:
    def __init__(self, size: int) -> None:
        self.parents = list(range(size))

    def find(self, item: int) -> int:
        while self.parents[item] != item:
            self.parents[item] = self.parents[self.parents[item]]
            item = self.parents[item]
        return item

    def union(self, a: int, b: int) -> None:
        self.parents[self.find(a)] = self.find(b)

    def count(self) -> int:
        return len({self.find(item) for item in range(len(self.parents))})


def wishart_trace_moment_exact(power: int, n: int, m: int) -> int:
    """
    E tr((GGᵀ)^power) for an n×m matrix G of i.i.d. N(0, 1), by summing over
    Wick pairings of the 2·`power` factors of G in the trace.

    Raises:
        InvalidArgumentError: `power` outside [1, 7]
    """
    if not 1 <= power <= MAX_EXACT_TRACE_POWER:
        raise InvalidArgumentError(
            f"Trace power must be in [1, {MAX_EXACT_TRACE_POWER}], got {power}"
        )
    # tr((GGᵀ)^p) = Σ Π_q G[i_q, j_q]·G[i_{q+1}, j_q] with i_p = i_0
    factors = []
    for q in range(power):
        factors.append((q, q))
        factors.append(((q + 1) % power, q))
    total = 0
    for matching in _perfect_matchings(tuple(range(2 * power))):
        rows = _UnionFind(power)
        columns = _UnionFind(power)
        for a, b in matching:
            rows.union(factors[a][0], factors[b][0])
            columns.union(factors[a][1], factors[b][1])
        total += n ** rows.count() * m ** columns.count()
    return total


def wishart_trace_moment_mc(
    power: int, n: int, m: int, *, reps: int, seed: int
) -> MonteCarloEstimate:
    generator = stream_generator(seed, StreamDomain.MOMENT_CHECK, power)
    samples = []
    for batch in _batches(reps):
        gaussian = generator.standard_normal((batch, n, m))
        gram = gaussian @ gaussian.transpose(0, 2, 1)
        samples.append(np.trace(np.linalg.matrix_power(gram, power), axis1=1, axis2=2))
    return _estimate(np.concatenate(samples))


@attrs.frozen
class IdentityCheck:
    name: str
    k0: int
    lhs: int
    rhs: int

    @property
    def passed(self) -> bool:
        return self.lhs == self.rhs


@attrs.frozen
class IdentityReport:
    k0_max: int
    checks: tuple[IdentityCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def _binom(n: int, k: int) -> int:
    """C(n, k), zero outside 0 ≤ k ≤ n"""
    if k < 0 or n < 0 or k > n:
        return 0
    return math.comb(n, k)


def alternating_sum_first(k0: int) -> int:
    """Σ_{t=0}^{k₀-1} (-1)^t C(k₀+t, t+1) C(k₀-1, t)"""
    return sum(
        (-1) ** t * _binom(k0 + t, t + 1) * _binom(k0 - 1, t) for t in range(k0)
    )


def alternating_sum_second(k0: int) -> int:
    """Σ_{t=1}^{k₀-1} (-1)^t C(k₀+t-2, t-1) C(k₀-1, t)"""
    return sum(
        (-1) ** t * _binom(k0 + t - 2, t - 1) * _binom(k0 - 1, t)
        for t in range(1, k0)
    )


def error_term_coefficients(k0: int) -> tuple[int, int]:
    """
    Coefficients (a, b) of d1m^k₀ and d1m^(k₀-1)·d2m in Σ_{t=0}^{k₀} E_{2k₀,t}, where

        E_{2k₀,t} = d1m^k₀ (-1)^t C(k₀+t-1, t) C(k₀-1, t-1)
                  - d1m^(k₀-1) d2m (-1)^t C(k₀+t-1, t) C(k₀-1, t+1)
    """
    leading = sum(
        (-1) ** t * _binom(k0 + t - 1, t) * _binom(k0 - 1, t - 1)
        for t in range(k0 + 1)
    )
    mixed = -sum(
        (-1) ** t * _binom(k0 + t - 1, t) * _binom(k0 - 1, t + 1)
        for t in range(k0 + 1)
    )
    return leading, mixed


def error_term(k0: int, d1m: int, d2m: int) -> int:
    """Closed form E_{2k₀} = (-1)^k₀ d1m^(k₀-1)(d1m - d2m)"""
    return (-1) ** k0 * d1m ** (k0 - 1) * (d1m - d2m)


def identity_checks(k0_max: int) -> IdentityReport:
    """
    Verify, in exact integers, both alternating binomial identities for every
    k₀ ≤ `k0_max` and that the expansion of E_{2k₀} reduces to its closed form.
    The second identity and the reduction hold from k₀ = 2 on; the sum in the
    second identity is empty at k₀ = 1.

    Raises:
        InvalidArgumentError: `k0_max` outside [1, 25]
        InternalConsistencyError: An identity failed
    """
    if not 1 <= k0_max <= MAX_IDENTITY_K0:
        raise InvalidArgumentError(
            f"k0_max must be in [1, {MAX_IDENTITY_K0}], got {k0_max}"
        )
    checks: list[IdentityCheck] = []
    for k0 in range(1, k0_max + 1):
        sign = (-1) ** (k0 - 1)
        checks.append(
            IdentityCheck(
                name="alternating-sum-first", k0=k0, lhs=alternating_sum_first(k0), rhs=sign
            )
        )
        if k0 < 2:
            continue
        checks.append(
            IdentityCheck(
                name="alternating-sum-second",
                k0=k0,
                lhs=alternating_sum_second(k0),
                rhs=sign,
            )
        )
        leading, mixed = error_term_coefficients(k0)
        checks.append(
            IdentityCheck(
                name="error-term-leading", k0=k0, lhs=leading, rhs=(-1) ** k0
            )
        )
        checks.append(
            IdentityCheck(name="error-term-mixed", k0=k0, lhs=mixed, rhs=-((-1) ** k0))
        )
    for check in checks:
        if not check.passed:
            raise InternalConsistencyError(
                identity=check.name,
                k0=check.k0,
                detail=f"{check.lhs} != {check.rhs}",
            )
    logger.debug("%d exact identity checks passed", len(checks))
    return IdentityReport(k0_max=k0_max, checks=tuple(checks))
