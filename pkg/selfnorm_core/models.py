"""Pydantic models for bound parameters, reports, simulation specs and run configuration."""

from __future__ import annotations

import json
import math
from enum import Enum
from typing import Any, Literal, get_args

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_serializer,
    model_validator,
)

from .errors import NotPositiveDefinite
from .linalg import cholesky, default_psd_tol, psd_margin, sym_matrix


class LeadingFactorMode(str, Enum):
    EXACT = "exact"
    QUADRATIC_RELAX = "quadratic_relax"
    LINEAR_RELAX = "linear_relax"


def _matrix(value: Any) -> np.ndarray:
    if isinstance(value, MatrixSpec):
        raise TypeError("MatrixSpec needs a dimension; call .to_array(d) first")
    return sym_matrix(value)


def _require_pd(name: str, m: np.ndarray) -> None:
    try:
        cholesky(m)
    except NotPositiveDefinite as exc:
        raise ValueError(f"{name} must be positive definite") from exc


def _require_psd(name: str, m: np.ndarray) -> None:
    if float(np.linalg.eigvalsh(m)[0]) < -default_psd_tol(m):
        raise ValueError(f"{name} must be positive semidefinite")


class SubGaussianParams(BaseModel):
    """Scalars and matrices of the sub-Gaussian radius."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sigma_subg_sq: float = Field(gt=0)
    delta: float = Field(gt=0, lt=1)
    gamma: np.ndarray

    @field_validator("gamma", mode="before")
    @classmethod
    def _as_matrix(cls, value: Any) -> np.ndarray:
        return _matrix(value)

    @model_validator(mode="after")
    def _check_gamma(self) -> "SubGaussianParams":
        _require_psd("gamma", self.gamma)
        return self

    @property
    def d(self) -> int:
        return self.gamma.shape[0]


class BernsteinParams(BaseModel):
    """Scalars and matrices of the Bernstein radius.

    Static admissibility (V large enough relative to B_W^2 B_X^2) is data-free
    but is reported by ``burnin_check`` rather than enforced here.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sigma_var_sq: float = Field(gt=0)
    b_w: float = Field(gt=0)
    b_x_sq: np.ndarray
    gamma: np.ndarray
    v: np.ndarray
    eps: float = Field(gt=0, lt=1)
    nu: float = Field(gt=0, lt=1)
    delta: float = Field(gt=0, lt=1)
    relaxation: LeadingFactorMode = LeadingFactorMode.EXACT
    delta_inflated: bool = False

    @field_validator("b_x_sq", "gamma", "v", mode="before")
    @classmethod
    def _as_matrix(cls, value: Any) -> np.ndarray:
        return _matrix(value)

    @model_validator(mode="after")
    def _check(self) -> "BernsteinParams":
        if self.sigma_var_sq > self.b_w**2 * (1 + 1e-12):
            raise ValueError("sigma_var_sq cannot exceed b_w^2")
        shapes = {self.b_x_sq.shape, self.gamma.shape, self.v.shape}
        if len(shapes) != 1:
            raise ValueError(f"b_x_sq, gamma and v must share one shape, got {sorted(shapes)}")
        _require_pd("b_x_sq", self.b_x_sq)
        _require_pd("v", self.v)
        _require_psd("gamma", self.gamma)
        return self

    @classmethod
    def ridge(
        cls,
        gamma: Any,
        *,
        sigma_var_sq: float,
        b_w: float,
        b_x_sq: Any,
        eps: float,
        nu: float,
        delta: float,
        relaxation: LeadingFactorMode = LeadingFactorMode.EXACT,
    ) -> "BernsteinParams":
        """Ridge recipe: V = Gamma, alpha controlled by the sub-Gaussian bound at 2*delta overall."""
        return cls(
            sigma_var_sq=sigma_var_sq,
            b_w=b_w,
            b_x_sq=b_x_sq,
            gamma=gamma,
            v=gamma,
            eps=eps,
            nu=nu,
            delta=delta,
            relaxation=relaxation,
            delta_inflated=True,
        )

    @property
    def d(self) -> int:
        return self.v.shape[0]

    @property
    def sigma_var_eps_sq(self) -> float:
        return self.sigma_var_sq / (1.0 - self.eps)

    def static_lower(self) -> np.ndarray:
        """(1+nu)^2 eps^{-1} (d+2) B_W^2 B_X^2, with B_W on the variance-normalized scale."""
        scale = (1 + self.nu) ** 2 / self.eps * (self.d + 2) * self.b_w**2 / self.sigma_var_eps_sq
        return scale * self.b_x_sq

    def data_lower(self) -> np.ndarray:
        """e (1+nu)^2 V."""
        return math.e * (1 + self.nu) ** 2 * self.v

    def static_margin(self) -> float:
        return psd_margin(self.static_lower(), self.data_lower())


class BoundReport(BaseModel):
    """Radius^2 and the diagnostics that produced it."""

    model_config = ConfigDict(frozen=True)

    bound: Literal["subgaussian", "bernstein", "ridge_bernstein", "unregularized"]
    radius_sq: float | None
    alpha: float = 0.0
    leading_factor: float = 1.0
    logdet_ratio: float | None = None
    burnin_ok: bool = True
    self_norm_sq: float | None = None
    delta: float
    delta_inflated: bool = False
    data_margin: float | None = None
    static_margin: float | None = None

    @model_validator(mode="after")
    def _radius_matches_burnin(self) -> "BoundReport":
        if not self.burnin_ok and self.radius_sq is not None:
            raise ValueError("a burn-in-failed report cannot carry a radius")
        if self.burnin_ok and self.radius_sq is None:
            raise ValueError("a burn-in-passing report must carry a radius")
        return self

    def covers(self, lhs: float, scale: float = 1.0) -> bool:
        if self.radius_sq is None:
            raise ValueError("report has no radius (burn-in failed)")
        return lhs <= scale * self.radius_sq


class MatrixSpec(BaseModel):
    """Matrix given as ``identity:c``, ``diag:[...]`` or ``dense:[[...]]``."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["identity", "diag", "dense"]
    scale: float = 1.0
    values: list[float] | list[list[float]] | None = None

    @model_validator(mode="before")
    @classmethod
    def _parse(cls, value: Any) -> Any:
        if not isinstance(value, str):
            return value
        kind, sep, body = value.partition(":")
        kind = kind.strip()
        if not sep:
            raise ValueError("matrix spec must look like identity:c, diag:[...] or dense:[[...]]")
        if kind == "identity":
            return {"kind": kind, "scale": float(body)}
        if kind in ("diag", "dense"):
            try:
                values = json.loads(body)
            except json.JSONDecodeError as exc:
                raise ValueError(f"cannot parse {kind} values: {exc}") from exc
            return {"kind": kind, "values": values}
        raise ValueError(f"unknown matrix kind '{kind}'")

    @model_validator(mode="after")
    def _check_values(self) -> "MatrixSpec":
        if self.kind != "identity" and not self.values:
            raise ValueError(f"{self.kind} matrix needs values")
        if self.kind == "dense" and not all(isinstance(row, list) for row in self.values):
            raise ValueError("dense matrix values must be a list of rows")
        return self

    @model_serializer
    def _to_text(self) -> str:
        if self.kind == "identity":
            return f"identity:{self.scale!r}"
        return f"{self.kind}:{json.dumps(self.values)}"

    def to_array(self, d: int) -> np.ndarray:
        if self.kind == "identity":
            m = self.scale * np.eye(d)
        elif self.kind == "diag":
            m = np.diag(np.asarray(self.values, dtype=np.float64))
        else:
            m = np.asarray(self.values, dtype=np.float64)
        if m.shape != (d, d):
            raise ValueError(f"matrix spec gives shape {m.shape}, expected {(d, d)}")
        return sym_matrix(m)


class NoiseSpec(BaseModel):
    """Bounded martingale-difference noise."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["rademacher", "two_point", "truncated_gaussian", "uniform"] = "rademacher"
    b: float = Field(default=1.0, gt=0)
    p: float | None = Field(default=None, gt=0, le=1)
    s: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_kind_fields(self) -> "NoiseSpec":
        if self.kind == "two_point" and self.p is None:
            raise ValueError("two_point noise needs p")
        if self.kind == "truncated_gaussian" and self.s is None:
            raise ValueError("truncated_gaussian noise needs s")
        return self


class CovariateSpec(BaseModel):
    """Predictable covariate process."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["fixed_design", "random_sphere", "ar1"] = "random_sphere"
    radius: float = Field(default=1.0, gt=0)
    vectors: list[list[float]] | None = None
    a: MatrixSpec | None = None
    innovation: float = Field(default=0.5, ge=0)

    @field_validator("vectors", mode="before")
    @classmethod
    def _ensure_rows(cls, value: Any) -> Any:
        if value is None:
            return None
        if isinstance(value, list) and value and not isinstance(value[0], list):
            return [value]
        return value

    @model_validator(mode="after")
    def _check_kind_fields(self) -> "CovariateSpec":
        if self.kind == "fixed_design" and not self.vectors:
            raise ValueError("fixed_design covariates need vectors")
        if self.kind == "ar1" and self.a is None:
            raise ValueError("ar1 covariates need the transition matrix a")
        return self


class StoppingSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["horizon", "logdet"] = "horizon"
    horizon: int = Field(default=500, ge=0)
    threshold: float | None = None

    @model_validator(mode="after")
    def _check_threshold(self) -> "StoppingSpec":
        if self.kind == "logdet" and self.threshold is None:
            raise ValueError("logdet stopping needs a threshold")
        return self


class BoundSpec(BaseModel):
    """Bound choice and parameters as they appear in a config file.

    Noise-derived scalars (sigma_subg_sq, sigma_var_sq, b_w) and b_x_sq may be
    left out; they are then taken from the simulated noise/covariate models.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["subgaussian", "bernstein", "unregularized"] = "subgaussian"
    delta: float = Field(default=0.1, gt=0, lt=1)
    sigma_subg_sq: float | None = Field(default=None, gt=0)
    sigma_var_sq: float | None = Field(default=None, gt=0)
    b_w: float | None = Field(default=None, gt=0)
    b_x_sq: MatrixSpec | None = None
    gamma: MatrixSpec = MatrixSpec(kind="identity", scale=1.0)
    v: MatrixSpec | None = None
    eps: float = Field(default=0.1, gt=0, lt=1)
    nu: float = Field(default=0.1, gt=0, lt=1)
    relaxation: LeadingFactorMode = LeadingFactorMode.EXACT
    ridge: bool = False


class TrialSpec(BaseModel):
    """Everything needed to replay one simulated path."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    d: int = Field(default=2, ge=1)
    stopping: StoppingSpec = StoppingSpec()
    noise: NoiseSpec = NoiseSpec()
    covariates: CovariateSpec = CovariateSpec()
    bound: BoundSpec = BoundSpec()
    seed: int = Field(default=0, ge=0)
    radius_scale: float = Field(default=1.0, ge=0)


class CoverageReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_trials: int
    n_violations: int
    n_burnin_failures: int
    n_covered: int
    failure_rate: float
    failure_rate_unconditional: float
    clopper_pearson_95: tuple[float, float]
    delta: float

    @model_validator(mode="after")
    def _counts(self) -> "CoverageReport":
        if self.n_violations + self.n_covered + self.n_burnin_failures != self.n_trials:
            raise ValueError("violations + covered + burn-in failures must equal n_trials")
        return self

    @property
    def certified(self) -> bool:
        return self.clopper_pearson_95[1] <= self.delta


SuiteName = Literal[
    "identities",
    "second_moment",
    "volume",
    "leading_factor",
    "oracle",
    "supermartingale",
    "coverage",
    "containment",
    "tightness",
]
ALL_SUITES: tuple[str, ...] = get_args(SuiteName)


class SimulationSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d: int = Field(default=2, ge=1)
    stopping: StoppingSpec = StoppingSpec()
    n_trials: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)


class VerifySection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    suites: list[SuiteName] = Field(default_factory=lambda: list(ALL_SUITES))
    n: int = Field(default=1000, ge=0)
    instances: int = Field(default=1000, ge=1)
    dims: list[int] = Field(default_factory=lambda: [1, 2, 3, 5])
    deltas: list[float] = Field(default_factory=lambda: [0.01, 0.05, 0.1])
    lambda_directions: int = Field(default=20, ge=1)
    martingale_horizons: list[int] = Field(default_factory=lambda: [10, 100])
    logdet_threshold: float = Field(default=1.0, gt=0)

    @field_validator("suites", "dims", "deltas", "martingale_horizons", mode="before")
    @classmethod
    def _ensure_list(cls, value: Any) -> Any:
        if value is None:
            return []
        if isinstance(value, (str, int, float)):
            return [value]
        return value


class ExperimentSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["bandit", "ridge_coverage", "tightness", "sweep"] = "bandit"
    arms: list[list[float]] = Field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    theta_star: list[float] = Field(default_factory=lambda: [0.9, 1.0])
    theta_bound: float | None = Field(default=None, ge=0)
    providers: list[Literal["sub_gaussian", "bernstein", "fixed"]] = Field(
        default_factory=lambda: ["sub_gaussian", "bernstein"]
    )
    fixed_radius: float = Field(default=1.0, ge=0)
    n_seeds: int = Field(default=10, ge=1)
    horizons: list[int] = Field(default_factory=lambda: [1000, 10000])
    eps_grid: list[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2])
    nu_grid: list[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2])


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: str = "selfnorm-out"
    log_path: str | None = None


class RunConfig(BaseModel):
    """Full configuration of one CLI invocation."""

    model_config = ConfigDict(extra="forbid")

    command: Literal["radius", "verify", "experiment"] = "verify"
    simulation: SimulationSection = SimulationSection()
    bound: BoundSpec = BoundSpec()
    noise: NoiseSpec = NoiseSpec()
    covariates: CovariateSpec = CovariateSpec()
    verify: VerifySection = VerifySection()
    experiment: ExperimentSection = ExperimentSection()
    output: OutputSection = OutputSection()

    def trial_spec(self, **overrides: Any) -> TrialSpec:
        fields = {
            "d": self.simulation.d,
            "stopping": self.simulation.stopping,
            "noise": self.noise,
            "covariates": self.covariates,
            "bound": self.bound,
            "seed": self.simulation.seed,
        }
        fields.update(overrides)
        return TrialSpec(**fields)
