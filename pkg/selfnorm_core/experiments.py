"""Least-squares confidence ellipsoids and an optimistic linear bandit."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import partial
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import solve_triangular

from .bounds import bernstein_radius_sq, ridge_radius_sq, subgaussian_radius_sq
from .errors import BurninViolated, DimensionMismatch
from .linalg import Array, Ellipsoid, as_vector, solve, sym_matrix
from .models import BernsteinParams, BoundReport, CoverageReport, NoiseSpec, SubGaussianParams, TrialSpec
from .simulation import NoiseModel, create_noise
from .stream import MartingaleState, new_state, observe, observe_many, stop_index
from .verification import (
    ResolvedTrial,
    bound_report,
    clopper_pearson,
    map_ordered,
    resolve_trial,
    simulate_path,
)

logger = logging.getLogger("selfnorm.experiments")


@dataclass(frozen=True)
class LinearModel:
    """Y_k = <theta_star, X_k> + W_k."""

    theta_star: Array
    noise: NoiseModel

    def respond(self, xs: ArrayLike, ws: ArrayLike) -> Array:
        return np.asarray(xs, dtype=np.float64) @ self.theta_star + np.asarray(ws, dtype=np.float64)


def ridge_estimate(state: MartingaleState, ys_applied: bool = True, theta_star: ArrayLike | None = None) -> Array:
    """Ridge estimate (V_t + Gamma)^{-1} sum_k Y_k X_k.

    With ``ys_applied`` the state was fed responses, so S_t already is
    sum Y_k X_k. Otherwise it was fed noise and sum Y_k X_k = V_t theta_star + S_t.
    """
    chol = state._chol()
    if ys_applied:
        return solve(chol, state.s)
    if theta_star is None:
        raise ValueError("theta_star is required when the state holds noise sums")
    return solve(chol, state.gram @ as_vector(theta_star, state.d) + state.s)


def confidence_ellipsoid(state: MartingaleState, report: BoundReport, theta_hat: ArrayLike) -> Ellipsoid:
    """{theta : ||theta - theta_hat||^2_{V_t + Gamma} <= r^2}.

    Raises:
        BurninViolated: for a report whose burn-in failed.
        NotPositiveDefinite: when r^2 = 0 (a point is not an ellipsoid).
    """
    if not report.burnin_ok:
        raise BurninViolated(
            "Cannot build a confidence set from a burn-in-failed report",
            data_ok=(report.data_margin or 0.0) >= 0.0,
            static_ok=(report.static_margin or 0.0) >= 0.0,
            data_margin=report.data_margin,
            static_margin=report.static_margin,
            report=report,
        )
    return Ellipsoid.from_precision(theta_hat, state.precision(), level=report.radius_sq)


@dataclass
class BanditEnv:
    """Finite arm set, unknown parameter, bounded noise."""

    arms: Array
    theta_star: Array
    noise: NoiseModel

    def __post_init__(self) -> None:
        self.arms = np.atleast_2d(np.asarray(self.arms, dtype=np.float64))
        self.theta_star = as_vector(self.theta_star)
        if self.arms.shape[0] == 0:
            raise ValueError("BanditEnv needs at least one arm")
        if self.arms.shape[1] != self.theta_star.shape[0]:
            raise DimensionMismatch(
                "arms and theta_star disagree on d", expected=self.theta_star.shape[0], got=self.arms.shape[1]
            )

    @property
    def d(self) -> int:
        return self.arms.shape[1]

    @property
    def b_x_sq(self) -> Array:
        return float(np.max(np.sum(self.arms**2, axis=1))) * np.eye(self.d)

    @property
    def mean_rewards(self) -> Array:
        return self.arms @ self.theta_star


@dataclass
class RegretTrace:
    arms: list[int] = field(default_factory=list)
    regrets: list[float] = field(default_factory=list)
    radii: list[float] = field(default_factory=list)
    modes: list[str] = field(default_factory=list)

    @property
    def cum_regret(self) -> Array:
        return np.cumsum(np.asarray(self.regrets, dtype=np.float64))

    @property
    def total_regret(self) -> float:
        return float(np.sum(self.regrets))

    def to_rows(self) -> list[dict[str, Any]]:
        cum = self.cum_regret
        return [
            {
                "step": t + 1,
                "arm": arm,
                "regret": regret,
                "cum_regret": float(cum[t]),
                "radius": radius,
                "provider_mode": mode,
            }
            for t, (arm, regret, radius, mode) in enumerate(zip(self.arms, self.regrets, self.radii, self.modes))
        ]


class RadiusProvider:
    """Supplies the confidence radius^2 the learner plays with at each step.

    ``bias`` bounds ||theta_star||_Gamma; the ridge estimate is off by
    (V_t+Gamma)^{-1} Gamma theta_star, so the noise radius r is widened to r + bias.
    """

    name: str = "base"
    bias: float = 0.0

    def widen(self, radius_sq: float) -> float:
        if self.bias == 0.0:
            return radius_sq
        return (math.sqrt(radius_sq) + self.bias) ** 2

    def radius_sq(self, state: MartingaleState) -> tuple[float, str]:
        raise NotImplementedError("Subclasses must implement radius_sq()")


class SubGaussianProvider(RadiusProvider):
    name = "sub_gaussian"

    def __init__(self, params: SubGaussianParams, bias: float = 0.0) -> None:
        self.params = params
        self.bias = bias

    def radius_sq(self, state: MartingaleState) -> tuple[float, str]:
        return self.widen(subgaussian_radius_sq(state, self.params).radius_sq), self.name


class BernsteinProvider(RadiusProvider):
    """Bernstein radius with the observable alpha bound, sub-Gaussian until burn-in passes."""

    name = "bernstein"

    def __init__(self, params: BernsteinParams, fallback: SubGaussianProvider) -> None:
        self.params = params
        self.fallback = fallback
        self.bias = fallback.bias
        self._engaged = False
        self._fell_back = False

    def radius_sq(self, state: MartingaleState) -> tuple[float, str]:
        try:
            report = ridge_radius_sq(state, self.params, self.fallback.params.sigma_subg_sq)
        except BurninViolated as exc:
            if not self._fell_back:
                logger.warning(
                    f"Bernstein burn-in not met at t={state.t} ({', '.join(exc.failed_conditions)}), "
                    "using the sub-Gaussian radius"
                )
                self._fell_back = True
            radius_sq, _ = self.fallback.radius_sq(state)
            return radius_sq, "sub_gaussian_fallback"
        if not self._engaged:
            logger.warning(f"Bernstein radius engaged at t={state.t}")
            self._engaged = True
        return self.widen(report.radius_sq), self.name


class FixedProvider(RadiusProvider):
    """Constant radius c; c = inf ranks arms by uncertainty alone."""

    name = "fixed"

    def __init__(self, radius: float) -> None:
        if radius < 0:
            raise ValueError("fixed radius must be non-negative")
        self.radius = radius

    def radius_sq(self, state: MartingaleState) -> tuple[float, str]:
        return self.radius**2, self.name


def regularizer_bias(gamma: ArrayLike, theta_star: ArrayLike, theta_bound: float | None = None) -> float:
    """Upper bound on ||theta_star||_Gamma.

    Without ``theta_bound`` the true parameter is used; with it,
    sqrt(lambda_max(Gamma)) * theta_bound bounds every ||theta||_2 <= theta_bound.
    """
    gamma = sym_matrix(gamma)
    if theta_bound is None:
        theta_star = as_vector(theta_star, gamma.shape[0])
        return math.sqrt(max(float(theta_star @ gamma @ theta_star), 0.0))
    if theta_bound < 0:
        raise ValueError("theta_bound must be non-negative")
    return theta_bound * math.sqrt(max(float(np.linalg.eigvalsh(gamma)[-1]), 0.0))


def create_provider(
    name: str,
    env: BanditEnv,
    gamma: ArrayLike,
    *,
    delta: float,
    eps: float = 0.1,
    nu: float = 0.1,
    fixed_radius: float = 1.0,
    theta_bound: float | None = None,
) -> RadiusProvider:
    """Build a radius provider by name for ``env`` under regularizer ``gamma``.

    The sub-Gaussian and Bernstein providers include the regularizer bias;
    a fixed radius is used as given.
    """
    gamma = sym_matrix(gamma)
    if name == "fixed":
        return FixedProvider(fixed_radius)
    sub = SubGaussianProvider(
        SubGaussianParams(sigma_subg_sq=env.noise.sigma_subg_sq, delta=delta, gamma=gamma),
        bias=regularizer_bias(gamma, env.theta_star, theta_bound),
    )
    if name == "sub_gaussian":
        return sub
    if name == "bernstein":
        params = BernsteinParams.ridge(
            gamma,
            sigma_var_sq=env.noise.sigma_var_sq,
            b_w=env.noise.b_w,
            b_x_sq=env.b_x_sq,
            eps=eps,
            nu=nu,
            delta=delta,
        )
        return BernsteinProvider(params, sub)
    raise ValueError(f"Unknown radius provider '{name}'. Available: bernstein, fixed, sub_gaussian")


def oful_run(
    env: BanditEnv,
    provider: RadiusProvider,
    horizon: int,
    seed: int,
    gamma: ArrayLike,
) -> RegretTrace:
    """Optimistic arm choice argmax <theta_hat, a> + r ||a||_{(V_t+Gamma)^{-1}}.

    Exact ties go to the lowest arm index. With an infinite radius the score
    is the width alone. While V_t + Gamma is singular arms are pulled in turn.
    """
    gamma = sym_matrix(gamma)
    ws = env.noise.draw(np.random.default_rng(np.random.SeedSequence(seed)), horizon)
    means = env.mean_rewards
    best = float(np.max(means))
    state = new_state(env.d, gamma)
    trace = RegretTrace()
    for t in range(horizon):
        if not state.is_definite:
            arm, radius, mode = t % len(env.arms), math.nan, "init"
        else:
            radius_sq, mode = provider.radius_sq(state)
            radius = math.sqrt(radius_sq)
            z = solve_triangular(state.gram_chol.lower, env.arms.T, lower=True)
            widths = np.sqrt(np.sum(z * z, axis=0))
            if math.isinf(radius):
                scores = widths
            else:
                scores = env.arms @ solve(state.gram_chol, state.s) + radius * widths
            arm = int(np.argmax(scores))
        x = env.arms[arm]
        state = observe(state, x, float(means[arm] + ws[t]))
        trace.arms.append(arm)
        trace.regrets.append(best - float(means[arm]))
        trace.radii.append(radius)
        trace.modes.append(mode)
    return trace


def _final_regret(
    env: BanditEnv, name: str, gamma: Array, horizon: int, options: dict[str, Any], seed: int
) -> float:
    provider = create_provider(name, env, gamma, **options)
    return oful_run(env, provider, horizon, seed, gamma).total_regret


def compare_providers(
    env: BanditEnv,
    providers: Sequence[str],
    gamma: ArrayLike,
    *,
    horizon: int,
    seeds: Sequence[int],
    workers: int = 1,
    **options: Any,
) -> dict[str, list[float]]:
    """Final cumulative regret per provider on paired seeds (same noise draws)."""
    gamma = sym_matrix(gamma)
    out = {}
    for name in providers:
        fn = partial(_final_regret, env, name, gamma, horizon, options)
        out[name] = map_ordered(fn, seeds, workers)
    return out


@dataclass(frozen=True)
class RidgeCoverageResult:
    coverage: CoverageReport
    max_identity_residual: float


def _ridge_trial(resolved: ResolvedTrial, theta_star: Array, include_bias: bool, index: int) -> tuple[bool, bool, float]:
    """(burnin_failed, covered, error-identity residual) for one path."""
    xs, ws = simulate_path(resolved, index=index)
    tau = stop_index(xs, resolved.rule, resolved.gamma)
    xs, ws = xs[:tau], ws[:tau]
    model = LinearModel(theta_star, resolved.noise)
    learner = observe_many(new_state(resolved.d, resolved.gamma), xs, model.respond(xs, ws))
    noise_state = observe_many(new_state(resolved.d, resolved.gamma), xs, ws)
    if not noise_state.is_definite:
        # no estimate yet; counted with the burn-in failures
        return True, False, 0.0
    theta_hat = ridge_estimate(learner)
    identity = solve(noise_state._chol(), noise_state.s - resolved.gamma @ theta_star)
    residual = float(np.max(np.abs((theta_hat - theta_star) - identity), initial=0.0))
    report = bound_report(resolved, noise_state)
    if not report.burnin_ok:
        return True, False, residual
    radius_sq = report.radius_sq * resolved.spec.radius_scale
    if include_bias:
        radius_sq = (math.sqrt(radius_sq) + regularizer_bias(resolved.gamma, theta_star)) ** 2
    error = theta_hat - theta_star
    covered = float(error @ noise_state.precision() @ error) <= radius_sq * (1.0 + 1e-12)
    return False, covered, residual


def ridge_coverage(
    spec: TrialSpec,
    theta_star: ArrayLike,
    n_trials: int,
    *,
    include_bias: bool = True,
    workers: int = 1,
) -> RidgeCoverageResult:
    """Frequency with which theta_star lies in the ridge confidence ellipsoid.

    With Gamma = 0, ||theta_hat - theta_star||_{V_t} = ||S_t||_{V_t^{-1}} so this
    is the self-normalized coverage itself. With Gamma > 0 the estimate carries
    the bias (V_t+Gamma)^{-1} Gamma theta_star, which ``include_bias`` adds to
    the radius as ||theta_star||_Gamma.
    """
    resolved = resolve_trial(spec)
    theta_star = as_vector(theta_star, spec.d)
    results = map_ordered(partial(_ridge_trial, resolved, theta_star, include_bias), range(n_trials), workers)
    n_burnin = sum(r[0] for r in results)
    n_covered = sum(r[1] for r in results)
    admitted = n_trials - n_burnin
    violations = admitted - n_covered
    coverage = CoverageReport(
        n_trials=n_trials,
        n_violations=violations,
        n_burnin_failures=n_burnin,
        n_covered=n_covered,
        failure_rate=violations / admitted if admitted else 0.0,
        failure_rate_unconditional=(violations + n_burnin) / n_trials,
        clopper_pearson_95=clopper_pearson(violations, admitted),
        delta=spec.bound.delta,
    )
    return RidgeCoverageResult(coverage=coverage, max_identity_residual=max((r[2] for r in results), default=0.0))


@dataclass(frozen=True)
class SweepRow:
    eps: float
    nu: float
    n_trials: int
    burnin_pass_rate: float
    mean_alpha: float | None
    mean_leading_factor: float | None
    mean_radius_sq: float | None
    failure_rate: float


def _sweep_trial(resolved: ResolvedTrial, index: int) -> BoundReport:
    xs, ws = simulate_path(resolved, index=index)
    tau = stop_index(xs, resolved.rule, resolved.gamma)
    state = observe_many(new_state(resolved.d, resolved.gamma), xs[:tau], ws[:tau])
    try:
        return bernstein_radius_sq(state, resolved.params)
    except BurninViolated as exc:
        return exc.report


def eps_nu_sweep(
    spec: TrialSpec,
    eps_grid: Sequence[float],
    nu_grid: Sequence[float],
    n_trials: int,
    *,
    workers: int = 1,
) -> list[SweepRow]:
    """Post-hoc sensitivity of the Bernstein radius to (eps, nu) on shared paths.

    Every cell replays the same seeds; picking a cell after looking at this
    table does not carry the coverage guarantee of a pre-registered choice.
    """
    rows = []
    for eps in eps_grid:
        for nu in nu_grid:
            cell = spec.model_copy(update={"bound": spec.bound.model_copy(update={"kind": "bernstein", "eps": eps, "nu": nu})})
            resolved = resolve_trial(cell)
            results = map_ordered(partial(_sweep_trial, resolved), range(n_trials), workers)
            passed = [report for report in results if report.burnin_ok]
            violations = sum(report.self_norm_sq > report.radius_sq for report in passed)
            rows.append(
                SweepRow(
                    eps=eps,
                    nu=nu,
                    n_trials=n_trials,
                    burnin_pass_rate=len(passed) / n_trials,
                    mean_alpha=float(np.mean([r.alpha for r in passed])) if passed else None,
                    mean_leading_factor=float(np.mean([r.leading_factor for r in passed])) if passed else None,
                    mean_radius_sq=float(np.mean([r.radius_sq for r in passed])) if passed else None,
                    failure_rate=violations / len(passed) if passed else 0.0,
                )
            )
    return rows


def bandit_env(arms: ArrayLike, theta_star: ArrayLike, noise: NoiseSpec) -> BanditEnv:
    return BanditEnv(arms=np.asarray(arms, dtype=np.float64), theta_star=as_vector(theta_star), noise=create_noise(noise))
