"""Dense symmetric / positive-definite linear algebra.

Cholesky factors with a cached log-determinant, O(d^2) rank-one updates,
Mahalanobis forms, PSD ordering and ellipsoid geometry (uniform sampling and
an exact containment oracle). Dimensions are small to moderate (d <= ~200),
so everything is stored densely.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf
from scipy.optimize import brentq

from .errors import DimensionMismatch, NotPositiveDefinite

logger = logging.getLogger("selfnorm.linalg")

Array = NDArray[np.float64]

DEFAULT_CONTAINMENT_TOL = 1e-9
MULTIPLIER_XTOL = 1e-12


def sym_matrix(values: ArrayLike) -> Array:
    """Return a read-only symmetric copy of ``values``.

    The average with the transpose makes entries[i][j] == entries[j][i] exact.
    """
    a = np.array(values, dtype=np.float64, ndmin=2)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"Expected a square matrix, got shape {a.shape}", expected="square", got=a.shape)
    a = 0.5 * (a + a.T)
    a.setflags(write=False)
    return a


def as_vector(values: ArrayLike, d: int | None = None) -> Array:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if d is not None and v.shape[0] != d:
        raise DimensionMismatch(f"Expected a vector of length {d}, got {v.shape[0]}", expected=d, got=v.shape[0])
    return v


@dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor of a positive-definite matrix with cached log-det."""

    lower: Array
    logdet: float

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    def matrix(self) -> Array:
        return self.lower @ self.lower.T


def _factor(lower: Array) -> CholFactor:
    lower.setflags(write=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return CholFactor(lower=lower, logdet=logdet)


def cholesky(m: ArrayLike) -> CholFactor:
    """Factor ``m = L L^T``.

    Raises:
        NotPositiveDefinite: if a pivot is not strictly positive.
    """
    a = sym_matrix(m)
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("Matrix contains non-finite entries")
    lower, info = dpotrf(np.array(a), lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefinite(
            f"Leading minor of order {info} is not positive definite",
            pivot=info - 1,
        )
    if info < 0:
        raise ValueError(f"Invalid argument {-info} passed to dpotrf")
    return _factor(np.array(lower))


def rank_one_update(f: CholFactor, x: ArrayLike) -> CholFactor:
    """Return the factor of ``L L^T + x x^T`` in O(d^2)."""
    x = np.array(as_vector(x, f.d))
    if not x.any():
        return f
    lower = np.array(f.lower)
    d = f.d
    for k in range(d):
        lkk = lower[k, k]
        r = math.hypot(lkk, x[k])
        c = r / lkk
        s = x[k] / lkk
        lower[k, k] = r
        if k + 1 < d:
            lower[k + 1 :, k] = (lower[k + 1 :, k] + s * x[k + 1 :]) / c
            x[k + 1 :] = c * x[k + 1 :] - s * lower[k + 1 :, k]
    return _factor(lower)


def solve(f: CholFactor, b: ArrayLike) -> Array:
    """Solve ``(L L^T) y = b`` with two triangular solves."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != f.d:
        raise DimensionMismatch(f"Right-hand side has {b.shape[0]} rows, factor has {f.d}", expected=f.d, got=b.shape[0])
    return cho_solve((f.lower, True), b)


def whiten(f: CholFactor, v: ArrayLike) -> Array:
    """Return ``L^{-1} v``."""
    return solve_triangular(f.lower, as_vector(v, f.d), lower=True)


def quad_form_inv(f: CholFactor, v: ArrayLike) -> float:
    """||v||^2_{M^{-1}} for M = L L^T, by one triangular solve."""
    z = whiten(f, v)
    return float(z @ z)


def quad_form(m: ArrayLike, v: ArrayLike) -> float:
    v = as_vector(v)
    return float(v @ np.asarray(m) @ v)


def default_psd_tol(b: ArrayLike) -> float:
    return 1e-9 * (1.0 + float(np.linalg.norm(np.asarray(b), "fro")))


def psd_margin(a: ArrayLike, b: ArrayLike) -> float:
    """Smallest eigenvalue of ``b - a`` (the burn-in margin)."""
    a = sym_matrix(a)
    b = sym_matrix(b)
    if a.shape != b.shape:
        raise DimensionMismatch("PSD comparison of matrices with different shapes", expected=b.shape, got=a.shape)
    return float(np.linalg.eigvalsh(b - a)[0])


def psd_order_leq(a: ArrayLike, b: ArrayLike, tol: float | None = None) -> bool:
    """True iff ``a <= b`` in PSD order, up to ``tol``."""
    if tol is None:
        tol = default_psd_tol(b)
    return psd_margin(a, b) >= -tol


@dataclass(frozen=True)
class Ellipsoid:
    """The set ``{x : (x - center)^T shape^{-1} (x - center) <= 1}``."""

    center: Array
    shape: Array
    chol: CholFactor = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        shape = sym_matrix(self.shape)
        center = np.array(as_vector(self.center, shape.shape[0]))
        center.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "chol", cholesky(shape))

    @classmethod
    def from_precision(cls, center: ArrayLike, precision: ArrayLike, level: float = 1.0) -> "Ellipsoid":
        """Ellipsoid ``{x : (x - center)^T precision (x - center) <= level}``."""
        pf = cholesky(precision)
        shape = level * cho_solve((pf.lower, True), np.eye(pf.d))
        return cls(center=center, shape=shape)

    @property
    def d(self) -> int:
        return self.shape.shape[0]

    def form(self, x: ArrayLike) -> float:
        return quad_form_inv(self.chol, as_vector(x, self.d) - self.center)

    def contains_point(self, x: ArrayLike, tol: float = DEFAULT_CONTAINMENT_TOL) -> bool:
        return self.form(x) <= 1.0 + tol


def sample_uniform_ellipsoid(e: Ellipsoid, rng: np.random.Generator, size: int | None = None) -> Array:
    """Draw uniformly from the ellipsoid.

    center + L (r u) with u uniform on the sphere and r = U^{1/d}.
    Returns a d-vector, or an (size, d) array when ``size`` is given.
    """
    n = 1 if size is None else int(size)
    d = e.d
    g = rng.standard_normal((n, d))
    u = g / np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.random(n) ** (1.0 / d)
    points = e.center + (r[:, None] * u) @ e.chol.lower.T
    return points[0] if size is None else points


def _secular(mu: float, h: Array, g2: Array) -> float:
    den = mu - h
    terms = np.divide(g2, den * den, out=np.zeros_like(g2), where=g2 > 0)
    return float(np.sum(terms)) - 1.0


def containment_max(outer: Ellipsoid, inner: Ellipsoid) -> float:
    """Maximum of the outer quadratic form over the inner ellipsoid.

    Inner points are c + L_in u with ||u|| <= 1, so the outer form becomes
    ||M u + c||^2 with M = L_out^{-1} L_in and c = L_out^{-1}(c_in - c_out).
    Maximizing a convex quadratic over the unit ball is a trust-region
    subproblem; the multiplier mu >= lambda_max(M^T M) is the root of the
    monotone secular equation sum g_i^2 / (mu - h_i)^2 = 1.
    """
    if outer.d != inner.d:
        raise DimensionMismatch("Ellipsoids live in different dimensions", expected=outer.d, got=inner.d)
    m = solve_triangular(outer.chol.lower, inner.chol.lower, lower=True)
    c = solve_triangular(outer.chol.lower, inner.center - outer.center, lower=True)
    h, w = np.linalg.eigh(m.T @ m)
    gt = w.T @ (m.T @ c)
    g2 = gt * gt
    h_max = float(h[-1])
    gnorm = float(np.sqrt(np.sum(g2)))

    top = (h_max - h) <= 1e-12 * max(h_max, 1.0)
    g_top = float(np.sqrt(np.sum(g2[top])))

    if g_top <= 1e-14 * (1.0 + gnorm):
        # hard case: the multiplier may sit at lambda_max
        den = h_max - h[~top]
        u_rest = gt[~top] / den
        rest = float(u_rest @ u_rest)
        if rest <= 1.0:
            u = np.zeros_like(gt)
            u[~top] = u_rest
            idx = int(np.flatnonzero(top)[-1])
            u[idx] = math.sqrt(1.0 - rest) * (1.0 if gt[idx] >= 0 else -1.0)
            z = m @ (w @ u) + c
            return float(z @ z)
        g2 = np.where(top, 0.0, g2)
        lo = h_max
    else:
        lo = h_max + 0.5 * g_top

    hi = h_max + gnorm
    if _secular(hi, h, g2) > 0.0:
        hi = h_max + 2.0 * gnorm
    mu = brentq(_secular, lo, hi, args=(h, g2), xtol=MULTIPLIER_XTOL, maxiter=500)
    u = gt / (mu - h)
    u /= np.linalg.norm(u)
    z = m @ (w @ u) + c
    return float(z @ z)


def ellipsoid_contains(outer: Ellipsoid, inner: Ellipsoid, tol: float = DEFAULT_CONTAINMENT_TOL) -> bool:
    """True iff ``inner`` lies inside ``outer`` (boundary ties within ``tol``)."""
    return containment_max(outer, inner) <= 1.0 + tol
