"""Monte Carlo and closed-form checks of the radii and the steps behind them.

Every trial derives its own random streams from ``SeedSequence(seed,
spawn_key=(index,))``: one child for covariates, one for noise. Whole-horizon
arrays are drawn up front, so the stepwise and the batched replay of a trial
see the same path, and results do not depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from functools import partial
from typing import Any, TypeVar

import numpy as np
from multiprocess import Pool
from numpy.typing import ArrayLike
from scipy.stats import beta

from .bounds import (
    bernstein_alpha,
    bernstein_priors,
    bernstein_radius_sq,
    burnin_check,
    eval_z_completed,
    eval_z_linear,
    gaussian_pac_bayes_terms,
    kl_uniform_ellipsoids,
    leading_factor,
    subgaussian_radius_sq,
    subgaussian_unregularized_report,
    uniform_ellipsoid_second_moment,
)
from .errors import BurninViolated, LambdaOutOfDomain, NotContained
from .linalg import (
    DEFAULT_CONTAINMENT_TOL,
    Array,
    Ellipsoid,
    as_vector,
    cholesky,
    containment_max,
    sample_uniform_ellipsoid,
    solve,
    sym_matrix,
)
from .models import BernsteinParams, BoundReport, CoverageReport, SubGaussianParams, TrialSpec
from .simulation import CovariateModel, NoiseModel, create_covariates, create_noise
from .stream import (
    MartingaleState,
    StoppingRule,
    cross_norm_sq,
    fixed_horizon,
    logdet_gain_at_least,
    new_state,
    observe_many,
    run_until,
    self_norm_sq,
    stop_index,
)

logger = logging.getLogger("selfnorm.verification")

T = TypeVar("T")
R = TypeVar("R")

SUFFICIENCY_RTOL = 1e-9
ORACLE_MARGIN = 1e-6


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Apply ``fn`` to ``items`` and return results in input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug(f"Fanning out {len(items)} tasks over {workers} workers")
    with Pool(workers) as pool:
        return pool.map(fn, items)


def trial_rngs(seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (covariate, noise) generators for trial ``index``."""
    cov_seq, noise_seq = np.random.SeedSequence(seed, spawn_key=(index,)).spawn(2)
    return np.random.default_rng(cov_seq), np.random.default_rng(noise_seq)


@dataclass(frozen=True)
class ResolvedTrial:
    """A TrialSpec with samplers built and bound parameters filled in."""

    spec: TrialSpec
    noise: NoiseModel
    covariates: CovariateModel
    gamma: Array
    params: SubGaussianParams | BernsteinParams
    rule: StoppingRule

    @property
    def d(self) -> int:
        return self.spec.d


def stopping_rule(spec: TrialSpec) -> StoppingRule:
    stopping = spec.stopping
    if stopping.kind == "logdet":
        return logdet_gain_at_least(stopping.threshold, stopping.horizon)
    return fixed_horizon(stopping.horizon)


def bernstein_params(spec: TrialSpec, noise: NoiseModel, covariates: CovariateModel) -> BernsteinParams:
    """Bernstein parameters with noise/covariate scalars filled in where the spec leaves them out."""
    bound = spec.bound
    d = spec.d
    gamma = bound.gamma.to_array(d)
    fields: dict[str, Any] = {
        "sigma_var_sq": bound.sigma_var_sq if bound.sigma_var_sq is not None else noise.sigma_var_sq,
        "b_w": bound.b_w if bound.b_w is not None else noise.b_w,
        "b_x_sq": bound.b_x_sq.to_array(d) if bound.b_x_sq is not None else covariates.b_x_sq,
        "eps": bound.eps,
        "nu": bound.nu,
        "delta": bound.delta,
        "relaxation": bound.relaxation,
    }
    if bound.ridge:
        return BernsteinParams.ridge(gamma, **fields)
    return BernsteinParams(gamma=gamma, v=bound.v.to_array(d) if bound.v is not None else gamma, **fields)


def resolve_trial(spec: TrialSpec) -> ResolvedTrial:
    noise = create_noise(spec.noise)
    covariates = create_covariates(spec.covariates, spec.d)
    gamma = spec.bound.gamma.to_array(spec.d)
    if spec.bound.kind == "bernstein":
        params: SubGaussianParams | BernsteinParams = bernstein_params(spec, noise, covariates)
    else:
        sigma = spec.bound.sigma_subg_sq if spec.bound.sigma_subg_sq is not None else noise.sigma_subg_sq
        params = SubGaussianParams(sigma_subg_sq=sigma, delta=spec.bound.delta, gamma=gamma)
    return ResolvedTrial(spec, noise, covariates, gamma, params, stopping_rule(spec))


def simulate_path(
    resolved: ResolvedTrial, rng: np.random.Generator | None = None, *, index: int = 0
) -> tuple[Array, Array]:
    """Whole-horizon covariates ``(T, d)`` and noise ``(T,)`` for one trial."""
    if rng is None:
        cov_rng, noise_rng = trial_rngs(resolved.spec.seed, index)
    else:
        cov_rng, noise_rng = rng.spawn(2)
    horizon = resolved.rule.horizon
    return resolved.covariates.draw(cov_rng, horizon), resolved.noise.draw(noise_rng, horizon)


def stopped_state(resolved: ResolvedTrial, xs: Array, ws: Array) -> MartingaleState:
    """State at the stopping time of ``resolved.rule`` along the path ``(xs, ws)``."""
    if resolved.rule.vectorizable:
        tau = stop_index(xs, resolved.rule, resolved.gamma)
        return observe_many(new_state(resolved.d, resolved.gamma), xs[:tau], ws[:tau])
    return run_until(zip(xs, ws), resolved.rule, resolved.gamma)


@dataclass(frozen=True)
class TrialOutcome:
    index: int
    stop_time: int
    lhs: float | None
    report: BoundReport
    scale: float = 1.0

    @property
    def burnin_failed(self) -> bool:
        return not self.report.burnin_ok

    @property
    def violated(self) -> bool:
        return not self.burnin_failed and not self.report.covers(self.lhs, self.scale)


def bound_report(resolved: ResolvedTrial, state: MartingaleState) -> BoundReport:
    kind = resolved.spec.bound.kind
    if kind == "subgaussian":
        return subgaussian_radius_sq(state, resolved.params)
    if kind == "unregularized":
        return subgaussian_unregularized_report(state, resolved.params)
    try:
        return bernstein_radius_sq(state, resolved.params)
    except BurninViolated as exc:
        logger.debug(f"Burn-in failed at t={state.t}: {', '.join(exc.failed_conditions)}")
        return exc.report


def run_trial(
    spec: TrialSpec | ResolvedTrial, rng: np.random.Generator | None = None, *, index: int = 0
) -> TrialOutcome:
    """Simulate one path to its stopping time and evaluate the configured bound.

    Burn-in failures come back as outcomes whose report has no radius.
    """
    resolved = spec if isinstance(spec, ResolvedTrial) else resolve_trial(spec)
    xs, ws = simulate_path(resolved, rng, index=index)
    state = stopped_state(resolved, xs, ws)
    report = bound_report(resolved, state)
    return TrialOutcome(
        index=index,
        stop_time=state.t,
        lhs=report.self_norm_sq,
        report=report,
        scale=resolved.spec.radius_scale,
    )


def _trial_at(resolved: ResolvedTrial, index: int) -> TrialOutcome:
    return run_trial(resolved, index=index)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact two-sided binomial interval for k successes out of n."""
    if n == 0:
        return 0.0, 1.0
    tail = 0.5 * (1.0 - level)
    lo = 0.0 if k == 0 else float(beta.ppf(tail, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1.0 - tail, k + 1, n - k))
    return lo, hi


def summarize_outcomes(outcomes: Sequence[TrialOutcome], delta: float) -> CoverageReport:
    n_trials = len(outcomes)
    n_burnin = sum(o.burnin_failed for o in outcomes)
    n_violations = sum(o.violated for o in outcomes)
    admitted = n_trials - n_burnin
    return CoverageReport(
        n_trials=n_trials,
        n_violations=n_violations,
        n_burnin_failures=n_burnin,
        n_covered=admitted - n_violations,
        failure_rate=n_violations / admitted if admitted else 0.0,
        failure_rate_unconditional=(n_violations + n_burnin) / n_trials if n_trials else 0.0,
        clopper_pearson_95=clopper_pearson(n_violations, admitted),
        delta=delta,
    )


def coverage_experiment(spec: TrialSpec, n_trials: int, *, workers: int = 1) -> CoverageReport:
    """Run ``n_trials`` independent trials and count radius violations."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    resolved = resolve_trial(spec)
    outcomes = map_ordered(partial(_trial_at, resolved), range(n_trials), workers)
    report = summarize_outcomes(outcomes, spec.bound.delta)
    logger.debug(
        f"Coverage {spec.bound.kind}: {report.n_violations}/{n_trials} violations, "
        f"{report.n_burnin_failures} burn-in failures"
    )
    return report


@dataclass(frozen=True)
class SupermartingaleEstimate:
    mean: float
    std_err: float
    n: int

    def passes(self, n_std_err: float = 3.0) -> bool:
        return self.mean <= 1.0 + n_std_err * self.std_err


def _stop_times(xs: Array, rule: StoppingRule, gamma: Array) -> Array:
    """Per-path stopping indices for a batch ``(n, T, d)`` under a vectorizable rule."""
    n, horizon = xs.shape[:2]
    if rule.logdet_threshold is None:
        return np.full(n, min(rule.horizon, horizon), dtype=np.int64)
    return np.fromiter((stop_index(path, rule, gamma) for path in xs), dtype=np.int64, count=n)


def check_supermartingale(
    lam: ArrayLike, spec: TrialSpec, eps: float, n: int, rng: np.random.Generator
) -> SupermartingaleEstimate:
    """Monte Carlo estimate of E exp(<lambda, S_tau> - sigma_{var,eps}^2 ||lambda||^2_{V_tau} / 2).

    Raises:
        LambdaOutOfDomain: if ||lambda||^2_{B_X^2 B_W^2} > eps^2.
    """
    noise = create_noise(spec.noise)
    covariates = create_covariates(spec.covariates, spec.d)
    lam = as_vector(lam, spec.d)
    b_x_sq = spec.bound.b_x_sq.to_array(spec.d) if spec.bound.b_x_sq is not None else covariates.b_x_sq
    b_w = spec.bound.b_w if spec.bound.b_w is not None else noise.b_w
    norm_sq = float(lam @ b_x_sq @ lam) * b_w**2
    limit = eps**2
    if norm_sq > limit * (1.0 + 1e-12):
        raise LambdaOutOfDomain(
            f"||lambda||^2 = {norm_sq:.6g} exceeds eps^2 = {limit:.6g}", norm_sq=norm_sq, limit=limit
        )
    sigma_var_sq = spec.bound.sigma_var_sq if spec.bound.sigma_var_sq is not None else noise.sigma_var_sq
    sigma_var_eps_sq = sigma_var_sq / (1.0 - eps)
    if n == 0:
        return SupermartingaleEstimate(mean=1.0, std_err=0.0, n=0)
    rule = stopping_rule(spec)
    gamma = spec.bound.gamma.to_array(spec.d)
    cov_rng, noise_rng = rng.spawn(2)
    xs = covariates.draw(cov_rng, rule.horizon, n)
    ws = noise.draw(noise_rng, rule.horizon, n)
    taus = _stop_times(xs, rule, gamma)
    live = np.arange(rule.horizon)[None, :] < taus[:, None]
    proj = xs @ lam
    exponent = np.sum(live * (proj * ws), axis=1) - 0.5 * sigma_var_eps_sq * np.sum(live * proj * proj, axis=1)
    values = np.exp(exponent)
    std_err = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return SupermartingaleEstimate(mean=float(np.mean(values)), std_err=std_err, n=n)


def admissible_directions(
    spec: TrialSpec, eps: float, count: int, rng: np.random.Generator, fill: float = 1.0
) -> list[Array]:
    """``count`` random lambdas with ||lambda||^2_{B_X^2 B_W^2} = fill * eps^2."""
    noise = create_noise(spec.noise)
    covariates = create_covariates(spec.covariates, spec.d)
    b_x_sq = spec.bound.b_x_sq.to_array(spec.d) if spec.bound.b_x_sq is not None else covariates.b_x_sq
    b_w = spec.bound.b_w if spec.bound.b_w is not None else noise.b_w
    out = []
    for _ in range(count):
        u = rng.standard_normal(spec.d)
        norm = math.sqrt(float(u @ b_x_sq @ u)) * b_w
        out.append(u * math.sqrt(fill) * eps / norm)
    return out


def check_second_moment(shape: ArrayLike, n: int, rng: np.random.Generator) -> float:
    """Relative Frobenius error of the empirical E[U U^T] against shape / (d + 2)."""
    ellipsoid = Ellipsoid(center=np.zeros(sym_matrix(shape).shape[0]), shape=shape)
    target = uniform_ellipsoid_second_moment(ellipsoid.shape)
    if n == 0:
        empirical = np.zeros_like(target)
    else:
        points = sample_uniform_ellipsoid(ellipsoid, rng, size=n)
        empirical = points.T @ points / n
    return float(np.linalg.norm(empirical - target, "fro") / np.linalg.norm(target, "fro"))


@dataclass(frozen=True)
class SufficiencyRecord:
    d: int
    alpha: float
    cross_norm: float
    max_form: float
    contained: bool
    sufficient: bool
    sufficient_literal: bool


@dataclass
class SufficiencyReport:
    records: list[SufficiencyRecord] = field(default_factory=list)
    n_skipped: int = 0

    @property
    def n_admitted(self) -> int:
        return len(self.records)

    @property
    def n_containment_failures(self) -> int:
        return sum(not r.contained for r in self.records)

    @property
    def n_implication_failures(self) -> int:
        return sum(r.sufficient and not r.contained for r in self.records)

    @property
    def n_sufficient(self) -> int:
        return sum(r.sufficient for r in self.records)

    @property
    def n_sufficient_literal(self) -> int:
        return sum(r.sufficient_literal for r in self.records)

    @property
    def passed(self) -> bool:
        return self.n_containment_failures == 0 and self.n_implication_failures == 0


def check_alpha_sufficiency(
    instances: Iterable[tuple[MartingaleState, BernsteinParams]], tol: float = DEFAULT_CONTAINMENT_TOL
) -> SufficiencyReport:
    """Check that the posterior ellipsoid sits inside the prior ellipsoid.

    Instances failing burn-in are skipped and counted. For admitted ones the
    scalar sufficient condition

        (sqrt(d+2) / (sqrt(e)(1+nu)) + ||S||_{M^{-1} V M^{-1}} / (1+alpha))^2 <= (d+2) / e

    is evaluated next to the exact oracle, along with the same display
    without the sqrt(e) in the first term.
    """
    report = SufficiencyReport()
    for state, p in instances:
        data_ok, static_ok = burnin_check(state, p)
        if not (data_ok and static_ok):
            report.n_skipped += 1
            continue
        d = state.d
        alpha = bernstein_alpha(state, p.v, p.nu, p.sigma_var_eps_sq)
        cross = math.sqrt(cross_norm_sq(state, p.v) / p.sigma_var_eps_sq)
        rho, pi = bernstein_priors(state, p)
        max_form = containment_max(pi, rho)
        rhs = (d + 2) / math.e
        term = cross / (1.0 + alpha)
        sufficient = (math.sqrt(d + 2) / (math.sqrt(math.e) * (1 + p.nu)) + term) ** 2 <= rhs * (1 + SUFFICIENCY_RTOL)
        literal = (math.sqrt(d + 2) / (1 + p.nu) + term) ** 2 <= rhs * (1 + SUFFICIENCY_RTOL)
        report.records.append(
            SufficiencyRecord(
                d=d,
                alpha=alpha,
                cross_norm=cross,
                max_form=max_form,
                contained=max_form <= 1.0 + tol,
                sufficient=sufficient,
                sufficient_literal=literal,
            )
        )
    if report.n_skipped:
        logger.warning(f"Skipped {report.n_skipped} instances that fail burn-in")
    return report


def spec_at_dim(spec: TrialSpec, d: int) -> TrialSpec | None:
    """``spec`` moved to dimension ``d``, or None when it pins explicit vectors or matrices."""
    if d == spec.d:
        return spec
    bound = spec.bound
    matrices = [bound.gamma, bound.v, bound.b_x_sq, spec.covariates.a]
    if spec.covariates.vectors is not None or any(m is not None and m.kind != "identity" for m in matrices):
        return None
    return spec.model_copy(update={"d": d})


def realized_instances(
    spec: TrialSpec, count: int, rng: np.random.Generator, *, max_attempts: int | None = None
) -> list[tuple[MartingaleState, BernsteinParams]]:
    """Simulated (state, params) pairs that passed burn-in, at most ``count`` of them."""
    resolved = resolve_trial(spec.model_copy(update={"bound": spec.bound.model_copy(update={"kind": "bernstein"})}))
    attempts = max_attempts if max_attempts is not None else 10 * count
    out = []
    for _ in range(attempts):
        if len(out) >= count:
            break
        xs, ws = simulate_path(resolved, rng)
        state = stopped_state(resolved, xs, ws)
        if all(burnin_check(state, resolved.params)):
            out.append((state, resolved.params))
    if len(out) < count:
        logger.warning(f"Only {len(out)} of {count} simulated instances passed burn-in")
    return out


def adversarial_instances(
    d: int,
    count: int,
    rng: np.random.Generator,
    *,
    eps: float = 0.1,
    nu: float = 0.1,
    levels: Sequence[float] = (0.0, 0.5, 1.0, 2.0, 10.0),
) -> list[tuple[MartingaleState, BernsteinParams]]:
    """Hand-placed S_tau at multiples of the alpha threshold, burn-in satisfied.

    V_tau = c V + R R^T with c >= e(1+nu)^2 so the data condition holds with
    room; B_X^2 is chosen so the static condition holds with a margin.
    """
    out = []
    threshold = nu * math.sqrt(d + 2) / (math.sqrt(math.e) * (1 + nu))
    for i in range(count):
        a = rng.standard_normal((d, d))
        v = a @ a.T / d + 0.1 * np.eye(d)
        g = rng.standard_normal((d, d))
        gamma = 0.1 * g @ g.T / d
        r = rng.standard_normal((d, d))
        c = math.e * (1 + nu) ** 2 * (1.0 + rng.random())
        gram = c * v + r @ r.T
        lower = cholesky(gram).lower
        xs = lower.T
        state = observe_many(new_state(d, gamma), xs, np.zeros(d))
        direction = rng.standard_normal(d)
        y = solve(state._chol(), direction)
        unit_cross = math.sqrt(float(y @ v @ y))
        target = direction * levels[i % len(levels)] * threshold / unit_cross
        ws = np.linalg.solve(lower, target)
        state = observe_many(new_state(d, gamma), xs, ws)
        b_x = 0.5 * eps * math.e * float(np.linalg.eigvalsh(v)[0]) / (d + 2)
        params = BernsteinParams(
            sigma_var_sq=1.0 - eps,
            b_w=1.0,
            b_x_sq=b_x * np.eye(d),
            gamma=gamma,
            v=v,
            eps=eps,
            nu=nu,
            delta=0.1,
        )
        out.append((state, params))
    return out


@dataclass(frozen=True)
class TightnessRow:
    horizon: int
    eps: float
    nu: float
    n_trials: int
    mean_radius_sq_subgaussian: float
    mean_radius_sq_bernstein: float | None
    mean_alpha: float | None
    burnin_failure_rate: float
    ratio: float | None
    predicted_ratio: float


def _tightness_trial(resolved: ResolvedTrial, sub: SubGaussianParams, index: int) -> tuple[float, float | None, float]:
    xs, ws = simulate_path(resolved, index=index)
    state = stopped_state(resolved, xs, ws)
    sub_radius = subgaussian_radius_sq(state, sub).radius_sq
    try:
        report = bernstein_radius_sq(state, resolved.params)
    except BurninViolated:
        return sub_radius, None, math.nan
    return sub_radius, report.radius_sq, report.alpha


def tightness_comparison(
    spec: TrialSpec,
    *,
    horizons: Sequence[int],
    eps_grid: Sequence[float] = (0.1,),
    nu_grid: Sequence[float] = (0.1,),
    n_trials: int = 100,
    workers: int = 1,
) -> list[TightnessRow]:
    """Mean sub-Gaussian and Bernstein radii on the same paths, per grid cell.

    Both radii are evaluated on one stopped state per trial; the Bernstein
    column is absent for cells where every trial fails burn-in.
    """
    rows = []
    for horizon in horizons:
        for eps in eps_grid:
            for nu in nu_grid:
                cell = spec.model_copy(
                    update={
                        "stopping": spec.stopping.model_copy(update={"horizon": horizon}),
                        "bound": spec.bound.model_copy(update={"kind": "bernstein", "eps": eps, "nu": nu}),
                    }
                )
                resolved = resolve_trial(cell)
                sigma_subg = spec.bound.sigma_subg_sq or resolved.noise.sigma_subg_sq
                sub = SubGaussianParams(sigma_subg_sq=sigma_subg, delta=spec.bound.delta, gamma=resolved.gamma)
                results = map_ordered(partial(_tightness_trial, resolved, sub), range(n_trials), workers)
                sub_radii = np.array([r[0] for r in results])
                passed = [(r[1], r[2]) for r in results if r[1] is not None]
                mean_sub = float(np.mean(sub_radii))
                mean_bern = float(np.mean([p[0] for p in passed])) if passed else None
                mean_alpha = float(np.mean([p[1] for p in passed])) if passed else None
                predicted = leading_factor(0.0, eps) * resolved.params.sigma_var_sq / sigma_subg
                rows.append(
                    TightnessRow(
                        horizon=horizon,
                        eps=eps,
                        nu=nu,
                        n_trials=n_trials,
                        mean_radius_sq_subgaussian=mean_sub,
                        mean_radius_sq_bernstein=mean_bern,
                        mean_alpha=mean_alpha,
                        burnin_failure_rate=1.0 - len(passed) / n_trials,
                        ratio=mean_bern / mean_sub if mean_bern is not None else None,
                        predicted_ratio=predicted,
                    )
                )
                logger.debug(f"Tightness T={horizon} eps={eps} nu={nu}: ratio {rows[-1].ratio}")
    return rows


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def _random_pd(d: int, rng: np.random.Generator, floor: float = 0.1) -> Array:
    a = rng.standard_normal((d, d))
    return a @ a.T / d + floor * np.eye(d)


@dataclass(frozen=True)
class IdentityResult:
    n: int
    max_err_linear: float
    max_err_rearranged: float
    max_err_warmup: float
    max_err_scale: float
    rtol: float

    @property
    def passed(self) -> bool:
        return max(self.max_err_linear, self.max_err_rearranged, self.max_err_warmup, self.max_err_scale) <= self.rtol


def check_identities(n: int, rng: np.random.Generator, *, max_d: int = 10, rtol: float = 1e-9) -> IdentityResult:
    """Fuzz the algebra behind the radii on random (S, V, Gamma, lambda).

    - linear form of Z(lambda) against its completed square;
    - (1/2)||S||^2_{M^{-1}} = Z(lambda) + (1/2)||lambda - M^{-1}S||^2_M - (1/2)||lambda||^2_Gamma;
    - Gaussian prior N(0, Gamma^{-1}) with posterior covariance M^{-1} reproduces the sub-Gaussian radius;
    - alpha with a general sigma equals alpha of the rescaled stream with unit sigma.
    """
    errs = {"linear": 0.0, "rearranged": 0.0, "warmup": 0.0, "scale": 0.0}
    for _ in range(n):
        d = int(rng.integers(1, max_d + 1))
        t = int(rng.integers(0, 3 * d + 1))
        xs = rng.standard_normal((t, d))
        ws = rng.standard_normal(t)
        gamma = _random_pd(d, rng)
        state = observe_many(new_state(d, gamma), xs, ws)
        lam = rng.standard_normal(d) * rng.uniform(0.1, 3.0)

        z_lin = eval_z_linear(lam, state)
        errs["linear"] = max(errs["linear"], _rel_err(z_lin, eval_z_completed(lam, state)))

        chol = state._chol()
        y = solve(chol, state.s)
        resid = chol.lower.T @ (lam - y)
        rhs = z_lin + 0.5 * float(resid @ resid) - 0.5 * float(lam @ gamma @ lam)
        errs["rearranged"] = max(errs["rearranged"], _rel_err(0.5 * self_norm_sq(state), rhs))

        delta = float(rng.uniform(0.01, 0.5))
        lhs, bound = gaussian_pac_bayes_terms(state, np.linalg.inv(state.precision()), np.linalg.inv(gamma), delta)
        radius = subgaussian_radius_sq(state, SubGaussianParams(sigma_subg_sq=1.0, delta=delta, gamma=gamma))
        errs["warmup"] = max(errs["warmup"], _rel_err(lhs, radius.self_norm_sq), _rel_err(bound, radius.radius_sq))

        v = _random_pd(d, rng)
        nu = float(rng.uniform(0.05, 0.95))
        sigma_sq = float(rng.uniform(0.1, 4.0))
        scaled = observe_many(new_state(d, gamma), xs, ws / math.sqrt(sigma_sq))
        errs["scale"] = max(
            errs["scale"], _rel_err(bernstein_alpha(state, v, nu, sigma_sq), bernstein_alpha(scaled, v, nu))
        )
    return IdentityResult(
        n=n,
        max_err_linear=errs["linear"],
        max_err_rearranged=errs["rearranged"],
        max_err_warmup=errs["warmup"],
        max_err_scale=errs["scale"],
        rtol=rtol,
    )


def nested_pair(
    d: int, rng: np.random.Generator, *, contained: bool
) -> tuple[Ellipsoid, Ellipsoid]:
    """(outer, inner) ellipsoid pair, nested or not by construction.

    In the outer ellipsoid's whitened coordinates the inner one is a ball-like
    body of radius r around c; ||c|| + r <= 1 nests it, ||c|| > 1 does not.
    """
    outer_center = rng.standard_normal(d)
    outer = Ellipsoid(center=outer_center, shape=_random_pd(d, rng))
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    radii = rng.uniform(0.05, 1.0, size=d)
    r = float(rng.uniform(0.05, 0.9))
    radii *= r / radii.max()
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    if contained:
        offset = direction * rng.uniform(0.0, 1.0 - r) * 0.999
    else:
        offset = direction * rng.uniform(1.05, 2.0)
    b = q @ np.diag(radii**2) @ q.T
    lower = outer.chol.lower
    inner = Ellipsoid(center=outer_center + lower @ offset, shape=lower @ b @ lower.T)
    return outer, inner


@dataclass(frozen=True)
class VolumeResult:
    n_contained: int
    max_err_contained: float
    n_not_contained: int
    n_raised: int
    rtol: float

    @property
    def passed(self) -> bool:
        return self.max_err_contained <= self.rtol and self.n_raised == self.n_not_contained


def check_volume_ratio(
    n: int, rng: np.random.Generator, *, dims: Sequence[int] = (1, 2, 3, 5), rtol: float = 1e-9
) -> VolumeResult:
    """KL of nested uniforms equals half the log-det ratio; non-nested pairs raise."""
    max_err = 0.0
    raised = 0
    for i in range(n):
        d = dims[i % len(dims)]
        outer, inner = nested_pair(d, rng, contained=True)
        expected = 0.5 * (np.linalg.slogdet(outer.shape)[1] - np.linalg.slogdet(inner.shape)[1])
        max_err = max(max_err, _rel_err(kl_uniform_ellipsoids(inner, outer), expected))
        outer, inner = nested_pair(d, rng, contained=False)
        try:
            kl_uniform_ellipsoids(inner, outer)
        except NotContained:
            raised += 1
    return VolumeResult(n_contained=n, max_err_contained=max_err, n_not_contained=n, n_raised=raised, rtol=rtol)


@dataclass(frozen=True)
class LeadingFactorResult:
    n_points: int
    alpha_max: float
    n_violations: int
    n_not_strict: int
    max_ratio: float

    @property
    def passed(self) -> bool:
        return self.n_violations == 0 and self.n_not_strict == 0


def check_leading_factor(n_points: int = 100_000, alpha_max: float = 100.0) -> LeadingFactorResult:
    """Exact factor <= min(1 + alpha^2, 1 + alpha/2), strictly for alpha > 0."""
    alphas = np.linspace(0.0, alpha_max, n_points)
    exact = (1.0 + alphas) ** 2 / (1.0 + 2.0 * alphas)
    relaxed = np.minimum(1.0 + alphas**2, 1.0 + 0.5 * alphas)
    violations = int(np.sum(exact > relaxed))
    not_strict = int(np.sum((alphas > 0) & (exact >= relaxed)))
    return LeadingFactorResult(
        n_points=n_points,
        alpha_max=alpha_max,
        n_violations=violations,
        n_not_strict=not_strict,
        max_ratio=float(np.max(exact / relaxed)),
    )


def brute_force_max(outer: Ellipsoid, inner: Ellipsoid, rng: np.random.Generator, *, n_samples: int = 2000) -> float:
    """Maximum of the outer form over the inner boundary by sampling plus ascent.

    Iterating u <- grad / ||grad|| on the sphere never decreases a convex form.
    """
    m = np.linalg.solve(outer.chol.lower, inner.chol.lower)
    c = np.linalg.solve(outer.chol.lower, inner.center - outer.center)
    g = rng.standard_normal((n_samples, outer.d))
    u = g / np.linalg.norm(g, axis=1, keepdims=True)
    z = u @ m.T + c
    values = np.sum(z * z, axis=1)
    best = -math.inf
    for start in np.argsort(values)[-5:]:
        point = u[start]
        for _ in range(200):
            grad = m.T @ (m @ point + c)
            norm = np.linalg.norm(grad)
            if norm == 0.0:
                break
            point = grad / norm
        zp = m @ point + c
        best = max(best, float(zp @ zp))
    return max(best, float(values.max()))


@dataclass(frozen=True)
class OracleResult:
    n: int
    n_decided: int
    n_disagreements: int
    n_oracle_below_brute: int

    @property
    def passed(self) -> bool:
        return self.n_disagreements == 0 and self.n_oracle_below_brute == 0


def check_containment_oracle(
    n: int, rng: np.random.Generator, *, dims: Sequence[int] = (1, 2, 3, 5)
) -> OracleResult:
    """Exact containment oracle against brute force on random pairs."""
    decided = disagreements = below = 0
    for i in range(n):
        d = dims[i % len(dims)]
        outer, inner = nested_pair(d, rng, contained=bool(rng.integers(0, 2)))
        if rng.random() < 0.5:
            # perturb the inner shape so pairs near the boundary show up
            inner = Ellipsoid(center=inner.center, shape=inner.shape * rng.uniform(0.5, 2.0))
        oracle = containment_max(outer, inner)
        brute = brute_force_max(outer, inner, rng)
        if brute > oracle * (1.0 + 1e-9) + 1e-12:
            below += 1
        if abs(oracle - 1.0) > ORACLE_MARGIN:
            decided += 1
            if (oracle <= 1.0) != (brute <= 1.0):
                disagreements += 1
    return OracleResult(n=n, n_decided=decided, n_disagreements=disagreements, n_oracle_below_brute=below)
