"""Exception hierarchy for selfnorm."""

from __future__ import annotations

from typing import Any


class SelfNormError(RuntimeError):
    """Base class for every error raised by the library."""


class NotPositiveDefinite(SelfNormError):
    """Raised when a Cholesky factorization meets a non-positive pivot."""

    def __init__(self, message: str, *, pivot: int | None = None) -> None:
        super().__init__(message)
        self.pivot = pivot


class DimensionMismatch(SelfNormError, ValueError):
    """Raised when operand shapes disagree."""

    def __init__(self, message: str, *, expected: Any = None, got: Any = None) -> None:
        super().__init__(message)
        self.expected = expected
        self.got = got


class NotPSD(SelfNormError, ValueError):
    """Raised when a matrix required to be positive semidefinite is not."""

    def __init__(self, message: str, *, min_eigenvalue: float | None = None) -> None:
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class SingularGram(SelfNormError):
    """Raised when V_t + Gamma (or V_t) is queried before it is positive definite."""


class GammaSingular(SelfNormError):
    """Raised when the sub-Gaussian bound is requested with det(Gamma) = 0."""


class BurninViolated(SelfNormError):
    """Raised when the Bernstein burn-in matrix inequality does not hold.

    ``report`` is the burn-in-failed report (radius absent) so callers that
    count failures can keep the margins.
    """

    def __init__(
        self,
        message: str,
        *,
        data_ok: bool,
        static_ok: bool,
        data_margin: float | None = None,
        static_margin: float | None = None,
        report: Any = None,
    ) -> None:
        super().__init__(message)
        self.data_ok = data_ok
        self.static_ok = static_ok
        self.data_margin = data_margin
        self.static_margin = static_margin
        self.report = report

    @property
    def failed_conditions(self) -> list[str]:
        failed = []
        if not self.data_ok:
            failed.append("data")
        if not self.static_ok:
            failed.append("static")
        return failed


class NotContained(SelfNormError):
    """Raised when the posterior ellipsoid is not inside the prior ellipsoid."""

    def __init__(self, message: str, *, max_form: float | None = None) -> None:
        super().__init__(message)
        self.max_form = max_form


class LambdaOutOfDomain(SelfNormError, ValueError):
    """Raised when lambda violates ||lambda||^2_{B_X^2 B_W^2} <= eps^2."""

    def __init__(self, message: str, *, norm_sq: float, limit: float) -> None:
        super().__init__(message)
        self.norm_sq = norm_sq
        self.limit = limit


class ConfigError(SelfNormError, ValueError):
    """Raised for invalid run inputs that pydantic cannot see (log rows, file paths)."""

    def __init__(self, message: str, *, field_path: str | None = None) -> None:
        super().__init__(message)
        self.field_path = field_path
