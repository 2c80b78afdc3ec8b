"""Bounded, conditionally centered noise models.

Draws are i.i.d. and independent of the covariates, so they are martingale
differences for any filtration the covariates are adapted to.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import truncnorm

from ..linalg import Array
from ..models import NoiseSpec


class NoiseModel:
    """Base class for noise samplers.

    ``b_w`` is the almost-sure bound |W| <= B_W. ``sigma_subg_sq`` is the
    Hoeffding proxy b^2, valid for every bounded symmetric kind.
    """

    kind: str = "base"

    def __init__(self, spec: NoiseSpec) -> None:
        self.spec = spec
        self.b = spec.b

    @property
    def sigma_var_sq(self) -> float:
        raise NotImplementedError("Subclasses must implement sigma_var_sq")

    @property
    def b_w(self) -> float:
        return self.b

    @property
    def sigma_subg_sq(self) -> float:
        return self.b**2

    def _sample(self, rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
        raise NotImplementedError("Subclasses must implement _sample()")

    def draw(self, rng: np.random.Generator, horizon: int, n_paths: int | None = None) -> Array:
        """Shape ``(horizon,)``, or ``(n_paths, horizon)`` when ``n_paths`` is given."""
        shape = (horizon,) if n_paths is None else (n_paths, horizon)
        return self._sample(rng, shape)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec.model_dump(exclude_none=True)})"


class RademacherNoise(NoiseModel):
    kind = "rademacher"

    @property
    def sigma_var_sq(self) -> float:
        return self.b**2

    def _sample(self, rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
        return self.b * (2.0 * rng.integers(0, 2, size=shape) - 1.0)


class TwoPointNoise(NoiseModel):
    """+-b with probability p/2 each, 0 otherwise; variance p b^2."""

    kind = "two_point"

    def __init__(self, spec: NoiseSpec) -> None:
        super().__init__(spec)
        self.p = float(spec.p)

    @property
    def sigma_var_sq(self) -> float:
        return self.p * self.b**2

    def _sample(self, rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
        u = rng.random(shape)
        return np.where(u < 0.5 * self.p, self.b, np.where(u < self.p, -self.b, 0.0))


class TruncatedGaussianNoise(NoiseModel):
    """N(0, s^2) conditioned on [-b, b]."""

    kind = "truncated_gaussian"

    def __init__(self, spec: NoiseSpec) -> None:
        super().__init__(spec)
        self.s = float(spec.s)
        self._dist = truncnorm(-self.b / self.s, self.b / self.s, loc=0.0, scale=self.s)

    @property
    def sigma_var_sq(self) -> float:
        return float(self._dist.var())

    def _sample(self, rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
        return np.asarray(self._dist.rvs(size=shape, random_state=rng), dtype=np.float64)


class UniformNoise(NoiseModel):
    kind = "uniform"

    @property
    def sigma_var_sq(self) -> float:
        return self.b**2 / 3.0

    def _sample(self, rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
        return rng.uniform(-self.b, self.b, size=shape)
