"""Confidence radii for self-normalized martingales and their closed-form pieces.

The sub-Gaussian radius

    ||S_t||^2_{(V_t+Gamma)^{-1}} <= sigma_subG^2 [log det(V_t+Gamma)/det(Gamma) + 2 log(1/delta)]

and the Bernstein radius, which replaces the proxy by the conditional
variance at the price of a burn-in condition and a leading factor
(1+alpha)^2 / ((1+2 alpha)(1-eps)):

    ||S_t||^2_{(V_t+Gamma)^{-1}} <= LF(alpha) sigma_var^2 [log det(V_t+Gamma)/det(V) + 2 log(1/delta)].

The Bernstein quantities that depend on the noise scale (alpha and the static
burn-in condition) are evaluated on the variance-normalized process
S / sigma_{var,eps}, B_W / sigma_{var,eps}, where sigma_{var,eps}^2 =
sigma_var^2 / (1 - eps); with sigma_{var,eps}^2 = 1 this is the bound verbatim.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import cho_solve, solve_triangular

from .errors import BurninViolated, DimensionMismatch, GammaSingular, NotContained, NotPositiveDefinite, SingularGram
from .linalg import (
    DEFAULT_CONTAINMENT_TOL,
    Array,
    CholFactor,
    Ellipsoid,
    as_vector,
    cholesky,
    containment_max,
    default_psd_tol,
    psd_margin,
    quad_form_inv,
    solve,
    sym_matrix,
)
from .models import BernsteinParams, BoundReport, LeadingFactorMode, SubGaussianParams
from .stream import MartingaleState, cross_norm_sq, self_norm_sq

logger = logging.getLogger("selfnorm.bounds")


def log_inv(delta: float) -> float:
    """u = log(1/delta)."""
    return math.log(1.0 / delta)


def _check_regularizer(state: MartingaleState, gamma: Array) -> None:
    if state.regularizer.shape != gamma.shape:
        raise DimensionMismatch("state and params disagree on d", expected=gamma.shape, got=state.regularizer.shape)
    if not np.allclose(state.regularizer, gamma, rtol=1e-12, atol=1e-12):
        raise ValueError("state was built with a different Gamma than the bound parameters")


def _gamma_factor(gamma: Array) -> CholFactor:
    try:
        return cholesky(gamma)
    except NotPositiveDefinite as exc:
        raise GammaSingular("The sub-Gaussian bound needs det(Gamma) > 0") from exc


def subgaussian_radius_sq(state: MartingaleState, p: SubGaussianParams) -> BoundReport:
    """Sub-Gaussian radius^2 at the state's (stopped) time."""
    _check_regularizer(state, p.gamma)
    gamma_chol = _gamma_factor(p.gamma)
    logdet_ratio = state.gram_logdet - gamma_chol.logdet
    radius_sq = p.sigma_subg_sq * (logdet_ratio + 2.0 * log_inv(p.delta))
    return BoundReport(
        bound="subgaussian",
        radius_sq=radius_sq,
        logdet_ratio=logdet_ratio,
        self_norm_sq=self_norm_sq(state),
        delta=p.delta,
    )


def _data_factor(state: MartingaleState) -> CholFactor:
    try:
        return cholesky(state.gram)
    except NotPositiveDefinite as exc:
        raise SingularGram(f"V_t is not positive definite (t={state.t})") from exc


def unregularized_lhs(state: MartingaleState) -> float:
    """||S_t||^2_{V_t^{-1}} - ||S_t||^2_{V_t^{-1} Gamma V_t^{-1}}."""
    y = solve(_data_factor(state), state.s)
    return float(state.s @ y - y @ state.regularizer @ y)


def subgaussian_unregularized_bound(state: MartingaleState, p: SubGaussianParams) -> float:
    """Unregularized deviation bound sigma^2 [log det V_t - log det Gamma + 2 log(1/delta)]."""
    _check_regularizer(state, p.gamma)
    v_chol = _data_factor(state)
    gamma_chol = _gamma_factor(p.gamma)
    return p.sigma_subg_sq * (v_chol.logdet - gamma_chol.logdet + 2.0 * log_inv(p.delta))


def subgaussian_unregularized_report(state: MartingaleState, p: SubGaussianParams) -> BoundReport:
    radius_sq = subgaussian_unregularized_bound(state, p)
    return BoundReport(
        bound="unregularized",
        radius_sq=radius_sq,
        logdet_ratio=_data_factor(state).logdet - _gamma_factor(p.gamma).logdet,
        self_norm_sq=unregularized_lhs(state),
        delta=p.delta,
    )


def _alpha_from_cross(cross_sq: float, d: int, nu: float, sigma_var_eps_sq: float) -> float:
    value = math.sqrt(math.e) * (1.0 + nu) * math.sqrt(cross_sq / sigma_var_eps_sq) / (nu * math.sqrt(d + 2)) - 1.0
    return max(value, 0.0)


def bernstein_alpha(state: MartingaleState, v: ArrayLike, nu: float, sigma_var_eps_sq: float = 1.0) -> float:
    """Weight factor alpha; zero while the cross-norm is below its threshold."""
    return _alpha_from_cross(cross_norm_sq(state, v), state.d, nu, sigma_var_eps_sq)


def burnin_margins(state: MartingaleState, p: BernsteinParams) -> tuple[float, float]:
    """Smallest eigenvalues of (V_t+Gamma) - e(1+nu)^2 V and of e(1+nu)^2 V - static lower bound."""
    return psd_margin(p.data_lower(), state.precision()), p.static_margin()


def burnin_check(state: MartingaleState, p: BernsteinParams) -> tuple[bool, bool]:
    """Return ``(data_ok, static_ok)``."""
    data_margin, static_margin = burnin_margins(state, p)
    data_ok = data_margin >= -default_psd_tol(state.precision())
    static_ok = static_margin >= -default_psd_tol(p.data_lower())
    return data_ok, static_ok


def leading_factor(alpha: float, eps: float, mode: LeadingFactorMode | str = LeadingFactorMode.EXACT) -> float:
    mode = LeadingFactorMode(mode)
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if not 0.0 <= eps < 1.0:
        raise ValueError("eps must lie in [0, 1)")
    if mode is LeadingFactorMode.EXACT:
        factor = (1.0 + alpha) ** 2 / (1.0 + 2.0 * alpha)
    elif mode is LeadingFactorMode.QUADRATIC_RELAX:
        factor = 1.0 + alpha**2
    else:
        factor = 1.0 + 0.5 * alpha
    return factor / (1.0 - eps)


def _burnin_or_raise(state: MartingaleState, p: BernsteinParams, bound: str) -> tuple[float, float, float | None]:
    _check_regularizer(state, p.gamma)
    data_margin, static_margin = burnin_margins(state, p)
    data_ok, static_ok = burnin_check(state, p)
    v_logdet = cholesky(p.v).logdet
    logdet_ratio = state.gram_logdet - v_logdet if state.is_definite else None
    if data_ok and static_ok:
        return data_margin, static_margin, logdet_ratio
    alpha = bernstein_alpha(state, p.v, p.nu, p.sigma_var_eps_sq) if state.is_definite else 0.0
    report = BoundReport(
        bound=bound,
        radius_sq=None,
        alpha=alpha,
        leading_factor=leading_factor(alpha, p.eps, p.relaxation),
        logdet_ratio=logdet_ratio,
        burnin_ok=False,
        self_norm_sq=self_norm_sq(state) if state.is_definite else None,
        delta=p.delta,
        delta_inflated=p.delta_inflated,
        data_margin=data_margin,
        static_margin=static_margin,
    )
    failed = [name for name, ok in (("data", data_ok), ("static", static_ok)) if not ok]
    raise BurninViolated(
        f"Burn-in violated ({', '.join(failed)}): data margin {data_margin:.6g}, static margin {static_margin:.6g}",
        data_ok=data_ok,
        static_ok=static_ok,
        data_margin=data_margin,
        static_margin=static_margin,
        report=report,
    )


def bernstein_radius_sq(state: MartingaleState, p: BernsteinParams) -> BoundReport:
    """Bernstein radius^2 at the state's (stopped) time.

    Raises:
        BurninViolated: carrying the burn-in-failed report and both margins.
    """
    data_margin, static_margin, logdet_ratio = _burnin_or_raise(state, p, "bernstein")
    alpha = bernstein_alpha(state, p.v, p.nu, p.sigma_var_eps_sq)
    factor = leading_factor(alpha, p.eps, p.relaxation)
    radius_sq = factor * p.sigma_var_sq * (logdet_ratio + 2.0 * log_inv(p.delta))
    return BoundReport(
        bound="bernstein",
        radius_sq=radius_sq,
        alpha=alpha,
        leading_factor=factor,
        logdet_ratio=logdet_ratio,
        burnin_ok=True,
        self_norm_sq=self_norm_sq(state),
        delta=p.delta,
        delta_inflated=p.delta_inflated,
        data_margin=data_margin,
        static_margin=static_margin,
    )


def _whitened_top_eigenvalue(chol: CholFactor, m: Array) -> float:
    """lambda_max(L^{-1} M L^{-T})."""
    half = solve_triangular(chol.lower, m, lower=True)
    whitened = solve_triangular(chol.lower, half.T, lower=True)
    return float(np.linalg.eigvalsh(0.5 * (whitened + whitened.T))[-1])


def bernstein_alpha_upper(state: MartingaleState, p: BernsteinParams, sigma_subg_sq: float) -> float:
    """Observable upper bound on alpha, valid on the sub-Gaussian event at ``p.delta``.

    ||S||^2_{(V+G)^{-1} V (V+G)^{-1}} <= lambda_max((V+G)^{-1/2} V (V+G)^{-1/2}) ||S||^2_{(V+G)^{-1}}
    and the last factor is bounded by the sub-Gaussian radius.
    """
    sub = SubGaussianParams(sigma_subg_sq=sigma_subg_sq, delta=p.delta, gamma=p.gamma)
    gamma_chol = _gamma_factor(p.gamma)
    sub_radius = sigma_subg_sq * (state.gram_logdet - gamma_chol.logdet + 2.0 * log_inv(sub.delta))
    top = _whitened_top_eigenvalue(state._chol(), p.v)
    return _alpha_from_cross(top * sub_radius, state.d, p.nu, p.sigma_var_eps_sq)


def ridge_radius_sq(state: MartingaleState, p: BernsteinParams, sigma_subg_sq: float) -> BoundReport:
    """Bernstein radius^2 with alpha replaced by its observable upper bound.

    Needs only V_t, Gamma and the log-det, so it applies to a learner's state
    fed with responses; the failure probability is 2*delta overall.
    """
    data_margin, static_margin, logdet_ratio = _burnin_or_raise(state, p, "ridge_bernstein")
    alpha = bernstein_alpha_upper(state, p, sigma_subg_sq)
    factor = leading_factor(alpha, p.eps, p.relaxation)
    radius_sq = factor * p.sigma_var_sq * (logdet_ratio + 2.0 * log_inv(p.delta))
    return BoundReport(
        bound="ridge_bernstein",
        radius_sq=radius_sq,
        alpha=alpha,
        leading_factor=factor,
        logdet_ratio=logdet_ratio,
        burnin_ok=True,
        delta=p.delta,
        delta_inflated=True,
        data_margin=data_margin,
        static_margin=static_margin,
    )


def eval_z_linear(lam: ArrayLike, state: MartingaleState) -> float:
    """<lambda, S_t> - ||lambda||^2_{V_t} / 2."""
    lam = as_vector(lam, state.d)
    return float(lam @ state.s - 0.5 * lam @ state.gram @ lam)


def eval_z_completed(lam: ArrayLike, state: MartingaleState) -> float:
    """Completed-square form of ``eval_z_linear`` through V_t + Gamma."""
    lam = as_vector(lam, state.d)
    chol = state._chol()
    y = solve(chol, state.s)
    residual = chol.lower.T @ (lam - y)
    return float(0.5 * (state.s @ y) - 0.5 * (residual @ residual) + 0.5 * (lam @ state.regularizer @ lam))


def _factor_or_singular(name: str, m: ArrayLike) -> CholFactor:
    try:
        return cholesky(m)
    except NotPositiveDefinite as exc:
        raise SingularGram(f"{name} is not positive definite") from exc


def kl_gaussian(mean_rho: ArrayLike, sigma_rho: ArrayLike, sigma_pi: ArrayLike) -> float:
    """KL(N(mean, Sigma_rho) || N(0, Sigma_pi))."""
    rho_chol = _factor_or_singular("sigma_rho", sigma_rho)
    pi_chol = _factor_or_singular("sigma_pi", sigma_pi)
    d = rho_chol.d
    mean = as_vector(mean_rho, d)
    trace = float(np.trace(cho_solve((pi_chol.lower, True), sym_matrix(sigma_rho))))
    value = 0.5 * (trace - d + quad_form_inv(pi_chol, mean) + pi_chol.logdet - rho_chol.logdet)
    return max(value, 0.0)


def gaussian_pac_bayes_terms(
    state: MartingaleState, sigma_rho: ArrayLike, sigma_pi: ArrayLike, delta: float
) -> tuple[float, float]:
    """Both sides of the Gaussian-prior PAC-Bayes inequality (unit proxy).

    lhs = ||S||^2_{M^{-1}} + ||S||^2_{M^{-1} G M^{-1}} - ||S||^2_{M^{-1} Sigma_pi^{-1} M^{-1}}
    rhs = tr(Sigma_pi^{-1} Sigma_rho + V Sigma_rho - I) + log det Sigma_pi / det Sigma_rho + 2u
    with M = V + Gamma. Sigma_rho = M^{-1}, Sigma_pi = Gamma^{-1} collapses them to the
    sub-Gaussian radius.
    """
    chol = state._chol()
    rho_chol = _factor_or_singular("sigma_rho", sigma_rho)
    pi_chol = _factor_or_singular("sigma_pi", sigma_pi)
    y = solve(chol, state.s)
    lhs = float(state.s @ y + y @ state.regularizer @ y - quad_form_inv(pi_chol, y))
    sigma_rho = sym_matrix(sigma_rho)
    trace = float(np.trace(cho_solve((pi_chol.lower, True), sigma_rho) + state.gram @ sigma_rho)) - state.d
    rhs = trace + pi_chol.logdet - rho_chol.logdet + 2.0 * log_inv(delta)
    return lhs, rhs


def kl_uniform_ellipsoids(rho: Ellipsoid, pi: Ellipsoid, tol: float = DEFAULT_CONTAINMENT_TOL) -> float:
    """KL between uniform laws on nested ellipsoids: half the log volume ratio.

    Raises:
        NotContained: when ``rho`` sticks out of ``pi`` (the divergence is infinite).
    """
    max_form = containment_max(pi, rho)
    if max_form > 1.0 + tol:
        raise NotContained(f"rho ellipsoid leaves pi ellipsoid (max form {max_form:.6g})", max_form=max_form)
    return 0.5 * (pi.chol.logdet - rho.chol.logdet)


def uniform_ellipsoid_second_moment(shape: ArrayLike) -> Array:
    """E[U U^T] = shape / (d + 2) for U uniform on the centered ellipsoid."""
    shape = sym_matrix(shape)
    return shape / (shape.shape[0] + 2)


def bernstein_priors(state: MartingaleState, p: BernsteinParams) -> tuple[Ellipsoid, Ellipsoid]:
    """Posterior and prior ellipsoids of the Bernstein argument.

    rho: center (1+alpha)^{-1} (V_t+Gamma)^{-1} S_t (variance-normalized), shape (d+2)(V_t+Gamma)^{-1}.
    pi: center 0, shape e^{-1}(d+2) V^{-1}.
    """
    alpha = bernstein_alpha(state, p.v, p.nu, p.sigma_var_eps_sq)
    d = state.d
    center = solve(state._chol(), state.s) / math.sqrt(p.sigma_var_eps_sq) / (1.0 + alpha)
    rho = Ellipsoid.from_precision(center, state.precision(), level=d + 2)
    pi = Ellipsoid.from_precision(np.zeros(d), p.v, level=(d + 2) / math.e)
    return rho, pi


def empirical_sigma_var_sq(ws: ArrayLike) -> float:
    """Plug-in mean of W_k^2; for experiments only, never used inside a radius."""
    ws = np.asarray(ws, dtype=np.float64).reshape(-1)
    if ws.size == 0:
        raise ValueError("need at least one noise value")
    return float(np.mean(ws * ws))
