"""Checks run by `subspace-uq selftest`."""

import logging

import attrs
import numpy as np

from .bias import detectability_edge, inflated_singular_values, shrink_singular_values
from .model import Dims
from .moments import (
    MAX_IDENTITY_K0,
    identity_checks,
    wishart_frobenius_mc,
    wishart_frobenius_moment,
)

logger = logging.getLogger(__name__)

SHRINKAGE_DIMS = Dims(d1=100, d2=300, r=50)
SHRINKAGE_TOLERANCE = 1e-9
SMOKE_LAMBDAS = (3.0, 2.0, 1.0)
SMOKE_DIM = 50
SMOKE_SE_MARGIN = 4.0


@attrs.frozen
class SelftestResult:
    name: str
    passed: bool
    detail: str


def check_identities(k0_max: int = MAX_IDENTITY_K0) -> SelftestResult:
    """
    Raises:
        InternalConsistencyError: An identity failed
    """
    report = identity_checks(k0_max)
    return SelftestResult(
        name="exact identities",
        passed=report.passed,
        detail=f"{len(report.checks)} checks for k0 <= {k0_max}",
    )


def check_shrinkage_round_trip(dims: Dims = SHRINKAGE_DIMS) -> SelftestResult:
    """
    Shrinkage must invert the noiseless inflation on λ² = j·d2, j = 1..r, and
    flag values below the detectability edge without producing NaN.
    """
    lambdas = np.sqrt(dims.d2 * np.arange(dims.r, 0, -1, dtype=np.float64))
    estimate = shrink_singular_values(dims, inflated_singular_values(dims, lambdas))
    worst = float(np.max(np.abs(estimate.values - lambdas) / lambdas))

    edge = detectability_edge(dims)
    below_edge = shrink_singular_values(dims, [0.5 * edge, 0.1 * edge])
    flagged = below_edge.invalid_count == 2 and bool(
        np.all(np.isfinite(below_edge.values))
    )
    return SelftestResult(
        name="shrinkage round trip",
        passed=estimate.all_valid and worst < SHRINKAGE_TOLERANCE and flagged,
        detail=f"max relative error {worst:.3g} over {dims.r} values",
    )


def check_wishart_moment(*, reps: int, seed: int) -> SelftestResult:
    checks = []
    for j1, j2 in ((1, 1), (1, 2)):
        estimate = wishart_frobenius_mc(
            SMOKE_LAMBDAS, SMOKE_DIM, j1, j2, reps=reps, seed=seed
        )
        reference = wishart_frobenius_moment(SMOKE_LAMBDAS, SMOKE_DIM, j1, j2)
        checks.append(estimate.deviation_in_se(reference))
    worst = max(checks)
    return SelftestResult(
        name="Wishart moment smoke test",
        passed=worst <= SMOKE_SE_MARGIN,
        detail=f"worst deviation {worst:.2f} SE over {reps} replicates",
    )


def run_selftest(*, reps: int, seed: int) -> list[SelftestResult]:
    """
    Raises:
        InternalConsistencyError: An exact identity failed
    """
    results = [
        check_identities(),
        check_shrinkage_round_trip(),
        check_wishart_moment(reps=reps, seed=seed),
    ]
    for result in results:
        logger.info(
            "Selftest %s: %s (%s)",
            result.name,
            "passed" if result.passed else "FAILED",
            result.detail,
        )
    return results
