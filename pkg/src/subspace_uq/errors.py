"""Exceptions shared by the numerical modules and the harness."""

from typing import override

import attrs


class InvalidArgumentError(ValueError):
    """An argument is outside the domain an operation accepts"""


class NumericalFailureError(ArithmeticError):
    """A LAPACK routine failed to converge"""


@attrs.frozen(kw_only=True)
class PreconditionViolationError(ValueError):
    """
    The noise is too strong for the perturbation series. The series requires
    `noise_norm < lambda_r / 2`.
    """

    noise_norm: float
    lambda_r: float

    @override
    def __str__(self) -> str:
        return (
            f"SNR gate failed: ||X|| = {self.noise_norm:.6g} is not below "
            f"lambda_r / 2 = {self.lambda_r / 2:.6g}"
        )


@attrs.frozen(kw_only=True)
class InternalConsistencyError(AssertionError):
    """An exact identity that must always hold did not"""

    identity: str
    k0: int
    detail: str = ""

    @override
    def __str__(self) -> str:
        message = f"Identity '{self.identity}' failed at k0={self.k0}"
        return f"{message}: {self.detail}" if self.detail else message


@attrs.frozen(kw_only=True)
class ExperimentFailureError(RuntimeError):
    """Too many replicates of an experiment failed"""

    failures: int
    replicates: int

    @override
    def __str__(self) -> str:
        return (
            f"{self.failures} of {self.replicates} replicates failed, "
            "more than the 1% that can be skipped"
        )
