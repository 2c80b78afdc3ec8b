"""Predictable covariate processes with an almost-sure bound X X^T <= B_X^2."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch
from ..linalg import Array
from ..models import CovariateSpec


def clip_rows(x: Array, radius: float) -> Array:
    """Scale every row with norm above ``radius`` back onto the sphere."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x * np.minimum(1.0, radius / np.maximum(norms, np.finfo(np.float64).tiny))


class CovariateModel:
    """Base class for covariate samplers.

    Covariates are drawn from their own random stream, so X_k never depends
    on W_k or later noise.
    """

    kind: str = "base"

    def __init__(self, spec: CovariateSpec, d: int) -> None:
        self.spec = spec
        self.d = d
        self.radius = spec.radius

    @property
    def b_x_sq(self) -> Array:
        return self.radius**2 * np.eye(self.d)

    def _sample(self, rng: np.random.Generator, n_paths: int, horizon: int) -> Array:
        raise NotImplementedError("Subclasses must implement _sample()")

    def draw(self, rng: np.random.Generator, horizon: int, n_paths: int | None = None) -> Array:
        """Shape ``(horizon, d)``, or ``(n_paths, horizon, d)`` when ``n_paths`` is given."""
        xs = self._sample(rng, 1 if n_paths is None else n_paths, horizon)
        return xs[0] if n_paths is None else xs

    def __repr__(self) -> str:
        return f"{type(self).__name__}(d={self.d}, {self.spec.model_dump(exclude_none=True)})"


class FixedDesign(CovariateModel):
    """Cycles through a fixed list of vectors; bound is the largest squared norm."""

    kind = "fixed_design"

    def __init__(self, spec: CovariateSpec, d: int) -> None:
        super().__init__(spec, d)
        vectors = np.asarray(spec.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] != d:
            raise DimensionMismatch(
                f"fixed_design vectors must have length {d}", expected=d, got=vectors.shape[-1]
            )
        self.vectors = vectors
        self.radius = float(np.max(np.linalg.norm(vectors, axis=1)))

    def _sample(self, rng: np.random.Generator, n_paths: int, horizon: int) -> Array:
        rows = self.vectors[np.arange(horizon) % len(self.vectors)]
        return np.broadcast_to(rows, (n_paths, horizon, self.d)).copy()


class RandomSphere(CovariateModel):
    kind = "random_sphere"

    def _sample(self, rng: np.random.Generator, n_paths: int, horizon: int) -> Array:
        g = rng.standard_normal((n_paths, horizon, self.d))
        return self.radius * g / np.linalg.norm(g, axis=-1, keepdims=True)


class AR1(CovariateModel):
    """X_1 = clip(xi_0), X_{k+1} = clip(A X_k + xi_k) with xi ~ N(0, innovation^2 I).

    The transition matrix comes from a MatrixSpec and is therefore symmetric.
    """

    kind = "ar1"

    def __init__(self, spec: CovariateSpec, d: int) -> None:
        super().__init__(spec, d)
        self.a = spec.a.to_array(d)
        self.innovation = spec.innovation

    def _sample(self, rng: np.random.Generator, n_paths: int, horizon: int) -> Array:
        shocks = self.innovation * rng.standard_normal((n_paths, horizon, self.d))
        xs = np.empty((n_paths, horizon, self.d))
        prev = np.zeros((n_paths, self.d))
        for k in range(horizon):
            prev = clip_rows(prev @ self.a.T + shocks[:, k], self.radius)
            xs[:, k] = prev
        return xs
