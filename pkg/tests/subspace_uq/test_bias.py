import math

import numpy as np
import pytest

from subspace_uq.bias import (
    BiasOrder,
    LambdaKind,
    SingularValueEstimate,
    bias_for_order,
    bias_infinity,
    bias_infinity_sides,
    bias_k,
    bias_ladder,
    default_bias_order,
    detectability_edge,
    estimate_singular_values,
    inflated_singular_values,
    inverse_power_norm2,
    shrink_singular_values,
    sigma_normalizer,
)
from subspace_uq.errors import InvalidArgumentError
from subspace_uq.model import (
    Dims,
    NoiseSpec,
    make_model,
    observe,
    sample_noise,
    top_r_svd,
)

UNEQUAL_DIMS = Dims(d1=50, d2=150, r=1)
"""d1m = 49, d2m = 149"""


class TestBiasK:
    @pytest.mark.parametrize("k", [1, 2, 3, 7])
    def test_square_dims(self, k: int) -> None:
        assert bias_k(Dims(d1=100, d2=100, r=1), [10.0], k) == pytest.approx(3.96)

    @pytest.mark.parametrize("lambda_base", [5.0, 9.5, 30.0, 120.0])
    def test_square_dims_is_exact_for_every_order(self, lambda_base: float) -> None:
        dims = Dims(d1=40, d2=40, r=3)
        lambdas = [4 * lambda_base, 2 * lambda_base, lambda_base]
        first = bias_k(dims, lambdas, 1)
        assert all(bias_k(dims, lambdas, k) == first for k in range(2, 61))
        assert bias_infinity(dims, lambdas) == pytest.approx(first, rel=1e-12)

    def test_second_order_formula(self) -> None:
        dims = Dims(d1=100, d2=600, r=6)
        lambdas = [960.0, 480.0, 240.0, 120.0, 60.0, 30.0]
        expected = 2 * (
            dims.d_star * inverse_power_norm2(lambdas, 1)
            - dims.delta_d**2 * inverse_power_norm2(lambdas, 2)
        )
        assert bias_k(dims, lambdas, 2) == pytest.approx(expected, rel=1e-12)

    def test_swap_symmetry(self) -> None:
        lambdas = [30.0, 20.0]
        dims = Dims(d1=60, d2=200, r=2)
        for k in range(1, 6):
            assert bias_k(dims, lambdas, k) == pytest.approx(
                bias_k(dims.swapped(), lambdas, k), rel=1e-14
            )
        assert bias_infinity(dims, lambdas) == pytest.approx(
            bias_infinity(dims.swapped(), lambdas), rel=1e-14
        )

    def test_converges_to_closed_form(self) -> None:
        assert bias_k(UNEQUAL_DIMS, [20.0], 60) == pytest.approx(
            bias_infinity(UNEQUAL_DIMS, [20.0]), rel=1e-12
        )

    def test_converges_when_well_separated(self) -> None:
        dims = Dims(d1=100, d2=600, r=2)
        lambdas = np.sqrt([20 * 600, 10 * 600])
        assert bias_k(dims, lambdas, 40) == pytest.approx(
            bias_infinity(dims, lambdas), rel=1e-8
        )

    def test_huge_order_stays_finite(self) -> None:
        assert math.isfinite(bias_k(UNEQUAL_DIMS, [20.0], 500))

    def test_invalid(self) -> None:
        with pytest.raises(InvalidArgumentError):
            bias_k(UNEQUAL_DIMS, [20.0], 0)
        with pytest.raises(InvalidArgumentError):
            bias_k(UNEQUAL_DIMS, [-1.0], 1)


class TestBiasInfinity:
    def test_value(self) -> None:
        assert bias_infinity(UNEQUAL_DIMS, [20.0]) == pytest.approx(0.9088644, rel=1e-6)

    def test_sides(self) -> None:
        left, right = bias_infinity_sides(UNEQUAL_DIMS, [20.0])
        assert left == pytest.approx(2 * 49 * 549 / (400 * 449))
        assert right == pytest.approx(2 * 149 * 449 / (400 * 549))
        assert left + right == pytest.approx(bias_infinity(UNEQUAL_DIMS, [20.0]))


@pytest.mark.parametrize(
    ("dims", "lambdas", "expected"),
    [
        (Dims(d1=51, d2=51, r=1), [1.0], 28.2843),
        (Dims(d1=52, d2=52, r=2), [2.0, 1.0], 29.1548),
    ],
)
def test_sigma_normalizer(dims: Dims, lambdas: list[float], expected: float) -> None:
    assert sigma_normalizer(dims, lambdas) == pytest.approx(expected, abs=1e-4)


def test_sigma_normalizer_homogeneity() -> None:
    dims = Dims(d1=30, d2=80, r=2)
    assert sigma_normalizer(dims, [6.0, 3.0]) == pytest.approx(
        sigma_normalizer(dims, [2.0, 1.0]) / 9
    )


def test_bias_for_order() -> None:
    assert bias_for_order(UNEQUAL_DIMS, [20.0], BiasOrder(3)) == bias_k(
        UNEQUAL_DIMS, [20.0], 3
    )
    assert bias_for_order(UNEQUAL_DIMS, [20.0], BiasOrder.infinity()) == bias_infinity(
        UNEQUAL_DIMS, [20.0]
    )


@pytest.mark.parametrize(("d1", "d2", "expected"), [(100, 100, 5), (100, 600, 7), (1, 2, 1)])
def test_default_bias_order(d1: int, d2: int, expected: int) -> None:
    assert default_bias_order(Dims(d1=d1, d2=d2, r=1)) == expected


class TestBiasOrder:
    @pytest.mark.parametrize(
        ("text", "expected"),
        [
            ("3", BiasOrder(3)),
            (" 12 ", BiasOrder(12)),
            ("inf", BiasOrder(None)),
            ("INF", BiasOrder(None)),
        ],
    )
    def test_parse(self, text: str, expected: BiasOrder) -> None:
        assert BiasOrder.parse(text) == expected

    @pytest.mark.parametrize("text", ["0", "-2", "x", "1.5", ""])
    def test_parse_invalid(self, text: str) -> None:
        with pytest.raises(InvalidArgumentError):
            BiasOrder.parse(text)

    def test_str_and_sort(self) -> None:
        orders = [BiasOrder.infinity(), BiasOrder(2), BiasOrder(1)]
        assert [str(order) for order in sorted(orders, key=BiasOrder.sort_key)] == [
            "1",
            "2",
            "inf",
        ]
        assert BiasOrder.infinity().is_infinite


class TestShrinkage:
    def test_inverts_noiseless_fixed_point(self) -> None:
        dims = Dims(d1=50, d2=50, r=1)
        inflated = inflated_singular_values(dims, [10.0])
        assert inflated[0] ** 2 == pytest.approx(225.0)
        estimate = shrink_singular_values(dims, inflated)
        assert estimate.kind is LambdaKind.SHRUNK
        assert estimate.values[0] == pytest.approx(10.0, rel=1e-12)
        assert estimate.all_valid

    def test_below_edge(self) -> None:
        dims = Dims(d1=50, d2=50, r=2)
        assert detectability_edge(dims) == pytest.approx(math.sqrt(200))
        estimate = shrink_singular_values(dims, [20.0, 14.0])
        assert estimate.valid == (True, False)
        assert estimate.values[1] == 14.0
        assert estimate.invalid_count == 1
        assert not estimate.all_valid

    def test_at_edge(self) -> None:
        dims = Dims(d1=50, d2=50, r=1)
        estimate = shrink_singular_values(dims, [detectability_edge(dims)])
        assert np.isfinite(estimate.values).all()

    def test_negative(self) -> None:
        with pytest.raises(InvalidArgumentError):
            shrink_singular_values(Dims(d1=5, d2=5, r=1), [-1.0])

    @pytest.mark.slow
    def test_removes_inflation(self) -> None:
        dims = Dims(d1=100, d2=100, r=1)
        model = make_model(dims, [40.0], orientation_seed=0)
        lambda_hat = []
        lambda_shrunk = []
        for stream in range(2000):
            noise = sample_noise(dims, NoiseSpec(seed=3, stream=stream))
            value = top_r_svd(observe(model, noise), 1).lambda_hat
            lambda_hat.append(value[0])
            lambda_shrunk.append(shrink_singular_values(dims, value).values[0])
        se_hat = np.std(lambda_hat, ddof=1) / math.sqrt(2000)
        se_shrunk = np.std(lambda_shrunk, ddof=1) / math.sqrt(2000)
        assert np.mean(lambda_hat) - 40 > 3 * se_hat
        assert abs(np.mean(lambda_shrunk) - 40) < 3 * se_shrunk


class TestEstimates:
    def test_kinds(self) -> None:
        dims = Dims(d1=50, d2=50, r=1)
        for kind, expected in [
            (LambdaKind.TRUE, 9.0),
            (LambdaKind.EMPIRICAL, 15.0),
            (LambdaKind.SHRUNK, 10.0),
        ]:
            estimate = estimate_singular_values(
                kind, dims, true_values=[9.0], lambda_hat=[15.0]
            )
            assert estimate.kind is kind
            assert estimate.values[0] == pytest.approx(expected)

    def test_rejects_non_positive(self) -> None:
        with pytest.raises(InvalidArgumentError):
            SingularValueEstimate(kind=LambdaKind.TRUE, values=[1.0, 0.0])

    def test_validity_length(self) -> None:
        with pytest.raises(InvalidArgumentError):
            SingularValueEstimate(kind=LambdaKind.SHRUNK, values=[1.0], valid=[True, True])


def test_bias_ladder() -> None:
    dims = Dims(d1=100, d2=600, r=6)
    estimate = SingularValueEstimate(
        kind=LambdaKind.TRUE, values=[960.0, 480.0, 240.0, 120.0, 60.0, 30.0]
    )
    ladder = bias_ladder(dims, estimate, 4)
    assert sorted(ladder.orders) == [1, 2, 3, 4]
    assert ladder.value(BiasOrder(2)) == bias_k(dims, estimate, 2)
    assert ladder.value(BiasOrder.infinity()) == bias_infinity(dims, estimate)
    assert ladder.sigma == sigma_normalizer(dims, estimate)
    # Corrections alternate in sign around the limit
    orders = ladder.orders
    assert orders[1] > orders[3] > ladder.b_infinity > orders[4] > orders[2]
    with pytest.raises(KeyError):
        ladder.value(BiasOrder(5))
