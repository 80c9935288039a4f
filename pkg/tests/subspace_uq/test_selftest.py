import pytest

from subspace_uq import selftest
from subspace_uq.errors import InternalConsistencyError
from subspace_uq.model import Dims
from subspace_uq.selftest import (
    check_identities,
    check_shrinkage_round_trip,
    check_wishart_moment,
    run_selftest,
)


def test_identities() -> None:
    result = check_identities()
    assert result.passed
    assert "k0 <= 25" in result.detail


@pytest.mark.parametrize("dims", [Dims(d1=100, d2=300, r=50), Dims(d1=60, d2=90, r=10)])
def test_shrinkage_round_trip(dims: Dims) -> None:
    assert check_shrinkage_round_trip(dims).passed


def test_wishart_moment() -> None:
    result = check_wishart_moment(reps=2000, seed=1)
    assert result.passed
    assert "2000 replicates" in result.detail


def test_run_selftest(caplog: pytest.LogCaptureFixture) -> None:
    caplog.set_level("INFO", logger=selftest.__name__)
    results = run_selftest(reps=500, seed=0)
    assert [result.name for result in results] == [
        "exact identities",
        "shrinkage round trip",
        "Wishart moment smoke test",
    ]
    assert len([r for r in caplog.records if r.name == selftest.__name__]) == 3


def test_identity_failure(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(
        "subspace_uq.moments.alternating_sum_second", lambda k0: 0
    )
    with pytest.raises(InternalConsistencyError):
        check_identities()
