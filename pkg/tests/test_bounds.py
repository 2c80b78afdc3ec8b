import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from selfnorm_core.bounds import (
    bernstein_alpha,
    bernstein_alpha_upper,
    bernstein_priors,
    bernstein_radius_sq,
    burnin_check,
    empirical_sigma_var_sq,
    eval_z_completed,
    eval_z_linear,
    gaussian_pac_bayes_terms,
    kl_gaussian,
    kl_uniform_ellipsoids,
    leading_factor,
    ridge_radius_sq,
    subgaussian_radius_sq,
    subgaussian_unregularized_bound,
    subgaussian_unregularized_report,
    uniform_ellipsoid_second_moment,
)
from selfnorm_core.errors import BurninViolated, GammaSingular, NotContained, SingularGram
from selfnorm_core.linalg import Ellipsoid
from selfnorm_core.models import BernsteinParams, LeadingFactorMode, SubGaussianParams
from selfnorm_core.stream import cross_norm_sq, new_state, observe, observe_many

from conftest import random_pd

E_INV = math.exp(-1.0)


def scalar_bernstein(v=10.0, **overrides):
    fields = dict(sigma_var_sq=1.0, b_w=1.0, b_x_sq=[[1.0]], gamma=[[v]], v=[[v]], eps=0.1, nu=0.1, delta=E_INV)
    fields.update(overrides)
    return BernsteinParams(**fields)


class TestSubGaussian:
    def test_radius_at_time_zero(self):
        state = new_state(2, np.eye(2))
        report = subgaussian_radius_sq(state, SubGaussianParams(sigma_subg_sq=1.0, delta=E_INV, gamma=np.eye(2)))
        assert report.radius_sq == pytest.approx(2.0)
        assert report.logdet_ratio == 0.0
        assert report.self_norm_sq == 0.0
        assert report.bound == "subgaussian"

    def test_radius_grows_with_logdet(self, rng):
        xs = rng.standard_normal((20, 2))
        ws = rng.standard_normal(20)
        state = observe_many(new_state(2, np.eye(2)), xs, ws)
        report = subgaussian_radius_sq(state, SubGaussianParams(sigma_subg_sq=0.5, delta=0.05, gamma=np.eye(2)))
        logdet = np.linalg.slogdet(np.eye(2) + xs.T @ xs)[1]
        assert report.radius_sq == pytest.approx(0.5 * (logdet + 2 * math.log(20.0)), rel=1e-10)

    def test_singular_gamma(self):
        state = observe_many(new_state(1, [[0.0]]), [[1.0]], [1.0])
        with pytest.raises(GammaSingular):
            subgaussian_radius_sq(state, SubGaussianParams(sigma_subg_sq=1.0, delta=0.1, gamma=[[0.0]]))

    def test_params_must_match_state(self):
        state = new_state(2, np.eye(2))
        with pytest.raises(ValueError):
            subgaussian_radius_sq(state, SubGaussianParams(sigma_subg_sq=1.0, delta=0.1, gamma=2.0 * np.eye(2)))

    def test_noise_scale_scales_radius_and_norm(self, rng):
        c = 3.0
        xs = rng.standard_normal((30, 2))
        ws = rng.uniform(-1, 1, 30)
        gamma = random_pd(2, rng)
        base = subgaussian_radius_sq(
            observe_many(new_state(2, gamma), xs, ws), SubGaussianParams(sigma_subg_sq=0.4, delta=0.1, gamma=gamma)
        )
        scaled = subgaussian_radius_sq(
            observe_many(new_state(2, gamma), xs, c * ws),
            SubGaussianParams(sigma_subg_sq=c**2 * 0.4, delta=0.1, gamma=gamma),
        )
        assert scaled.radius_sq == pytest.approx(c**2 * base.radius_sq, rel=1e-10)
        assert scaled.self_norm_sq == pytest.approx(c**2 * base.self_norm_sq, rel=1e-9)

    def test_radius_shrinks_as_delta_grows(self, rng):
        state = observe_many(new_state(2, np.eye(2)), rng.standard_normal((10, 2)), rng.standard_normal(10))
        radii = [
            subgaussian_radius_sq(state, SubGaussianParams(sigma_subg_sq=1.0, delta=delta, gamma=np.eye(2))).radius_sq
            for delta in (0.001, 0.01, 0.1, 0.5)
        ]
        assert radii == sorted(radii, reverse=True)
        assert radii[0] - radii[1] == pytest.approx(2.0 * math.log(10.0))


class TestUnregularized:
    def test_scalar_example(self):
        state = observe(new_state(1, [[1.0]]), [math.sqrt(2.0)], 0.3)
        p = SubGaussianParams(sigma_subg_sq=1.0, delta=E_INV, gamma=[[1.0]])
        assert subgaussian_unregularized_bound(state, p) == pytest.approx(math.log(2.0) + 2.0)

    def test_gram_equal_to_gamma(self):
        state = observe_many(new_state(2, np.eye(2)), np.eye(2), [0.0, 0.0])
        p = SubGaussianParams(sigma_subg_sq=3.0, delta=0.2, gamma=np.eye(2))
        assert subgaussian_unregularized_bound(state, p) == pytest.approx(2 * 3.0 * math.log(5.0))

    def test_report(self, rng):
        xs = rng.standard_normal((10, 2))
        ws = rng.standard_normal(10)
        gamma = 0.5 * np.eye(2)
        state = observe_many(new_state(2, gamma), xs, ws)
        report = subgaussian_unregularized_report(state, SubGaussianParams(sigma_subg_sq=1.0, delta=0.1, gamma=gamma))
        gram_inv = np.linalg.inv(xs.T @ xs)
        s = ws @ xs
        expected = s @ gram_inv @ s - s @ gram_inv @ gamma @ gram_inv @ s
        assert report.bound == "unregularized"
        assert report.self_norm_sq == pytest.approx(expected, rel=1e-9)

    def test_needs_invertible_gram(self):
        state = observe(new_state(2, np.eye(2)), [1.0, 0.0], 1.0)
        with pytest.raises(SingularGram):
            subgaussian_unregularized_bound(state, SubGaussianParams(sigma_subg_sq=1.0, delta=0.1, gamma=np.eye(2)))


class TestAlpha:
    def test_zero_sum(self):
        state = observe(new_state(2, np.eye(2)), [1.0, 0.0], 0.0)
        assert bernstein_alpha(state, np.eye(2), 0.1) == 0.0

    def test_threshold(self):
        d, nu = 2, 0.1
        threshold = nu * math.sqrt(d + 2) / (math.sqrt(math.e) * (1 + nu))
        state = observe(new_state(d, np.eye(d)), [1.0, 0.0], 2.0 * threshold)
        assert cross_norm_sq(state, np.eye(d)) == pytest.approx(threshold**2)
        assert bernstein_alpha(state, np.eye(d), nu) == pytest.approx(0.0, abs=1e-12)

    def test_unit_cross_norm(self):
        # S = (2, 0), V_t + Gamma = diag(2, 1) so (V_t+Gamma)^{-1} S = (1, 0)
        state = observe(new_state(2, np.eye(2)), [1.0, 0.0], 2.0)
        assert cross_norm_sq(state, np.eye(2)) == pytest.approx(1.0)
        expected = math.sqrt(math.e) * 1.5 / (0.5 * 2.0) - 1.0
        assert bernstein_alpha(state, np.eye(2), 0.5) == pytest.approx(expected, rel=1e-12)

    def test_variance_scaling(self, rng):
        xs = rng.standard_normal((12, 3))
        ws = rng.standard_normal(12)
        v = random_pd(3, rng)
        scaled = observe_many(new_state(3, np.eye(3)), xs, ws / 2.0)
        state = observe_many(new_state(3, np.eye(3)), xs, ws)
        assert bernstein_alpha(state, v, 0.2, 4.0) == pytest.approx(bernstein_alpha(scaled, v, 0.2), rel=1e-10)


class TestBurnin:
    def test_static_boundary(self):
        d, eps, nu = 2, 0.1, 0.1
        v = (d + 2) / (eps * math.e) * np.eye(d)
        p = BernsteinParams(
            sigma_var_sq=1.0 - eps, b_w=1.0, b_x_sq=np.eye(d), gamma=v, v=v, eps=eps, nu=nu, delta=0.1
        )
        _, static_ok = burnin_check(new_state(d, v), p)
        assert static_ok
        assert p.static_margin() == pytest.approx(0.0, abs=1e-9)

    def test_no_data_no_regularizer(self):
        p = scalar_bernstein(gamma=[[0.0]])
        data_ok, _ = burnin_check(new_state(1, [[0.0]]), p)
        assert not data_ok

    def test_data_condition_after_isotropic_observations(self, rng):
        d, nu = 2, 0.1
        p = BernsteinParams(
            sigma_var_sq=1.0, b_w=1.0, b_x_sq=np.eye(d), gamma=np.zeros((d, d)), v=2.0 * np.eye(d),
            eps=0.1, nu=nu, delta=0.1,
        )
        g = rng.standard_normal((400, d))
        xs = g / np.linalg.norm(g, axis=1, keepdims=True)
        state = observe_many(new_state(d, np.zeros((d, d))), xs, np.zeros(400))
        expected = np.linalg.eigvalsh(xs.T @ xs)[0] >= math.e * (1 + nu) ** 2 * 2.0
        data_ok, _ = burnin_check(state, p)
        assert data_ok == expected
        assert data_ok


class TestLeadingFactor:
    @pytest.mark.parametrize("mode", list(LeadingFactorMode))
    def test_alpha_zero(self, mode):
        assert leading_factor(0.0, 0.1, mode) == pytest.approx(1.0 / 0.9)

    def test_alpha_one(self):
        assert leading_factor(1.0, 0.0) == pytest.approx(4.0 / 3.0)
        assert leading_factor(1.0, 0.0, "quadratic_relax") == pytest.approx(2.0)
        assert leading_factor(1.0, 0.0, "linear_relax") == pytest.approx(1.5)
        assert leading_factor(1.0, 0.1) == pytest.approx(4.0 / (3.0 * 0.9))

    def test_relaxations_dominate(self):
        for alpha in np.linspace(0.0, 50.0, 501):
            exact = leading_factor(alpha, 0.2)
            assert exact <= leading_factor(alpha, 0.2, "quadratic_relax") + 1e-12
            assert exact <= leading_factor(alpha, 0.2, "linear_relax") + 1e-12

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            leading_factor(-0.1, 0.1)
        with pytest.raises(ValueError):
            leading_factor(0.1, 1.0)


class TestBernsteinRadius:
    def test_alpha_zero_radius(self):
        p = scalar_bernstein()
        state = observe_many(new_state(1, [[10.0]]), np.ones((25, 1)), np.zeros(25))
        report = bernstein_radius_sq(state, p)
        assert report.burnin_ok
        assert report.alpha == 0.0
        assert report.logdet_ratio == pytest.approx(math.log(3.5))
        assert report.radius_sq == pytest.approx((math.log(3.5) + 2.0) / 0.9)

    def test_burnin_failure_carries_report(self):
        p = scalar_bernstein()
        state = observe_many(new_state(1, [[10.0]]), np.ones((2, 1)), np.zeros(2))
        with pytest.raises(BurninViolated) as info:
            bernstein_radius_sq(state, p)
        exc = info.value
        assert exc.failed_conditions == ["data"]
        assert exc.data_margin < 0 < exc.static_margin
        assert exc.report.radius_sq is None
        assert not exc.report.burnin_ok

    def test_static_failure(self):
        p = scalar_bernstein(v=1.0)
        state = observe_many(new_state(1, [[1.0]]), np.ones((200, 1)), np.zeros(200))
        with pytest.raises(BurninViolated) as info:
            bernstein_radius_sq(state, p)
        assert info.value.failed_conditions == ["static"]

    def test_smaller_than_subgaussian_for_low_variance(self, rng):
        d = 2
        gamma = 300.0 * np.eye(d)
        g = rng.standard_normal((3000, d))
        xs = g / np.linalg.norm(g, axis=1, keepdims=True)
        ws = np.where(rng.random(3000) < 0.05, np.sign(rng.standard_normal(3000)), 0.0)
        state = observe_many(new_state(d, gamma), xs, ws)
        p = BernsteinParams(
            sigma_var_sq=0.05, b_w=1.0, b_x_sq=np.eye(d), gamma=gamma, v=gamma, eps=0.1, nu=0.1, delta=0.1
        )
        bernstein = bernstein_radius_sq(state, p)
        sub = subgaussian_radius_sq(state, SubGaussianParams(sigma_subg_sq=1.0, delta=0.1, gamma=gamma))
        assert bernstein.radius_sq < 0.5 * sub.radius_sq


class TestRidgeRadius:
    def test_alpha_upper_dominates_alpha(self, rng):
        d = 2
        gamma = 300.0 * np.eye(d)
        g = rng.standard_normal((2000, d))
        xs = g / np.linalg.norm(g, axis=1, keepdims=True)
        ws = np.sign(rng.standard_normal(2000))
        state = observe_many(new_state(d, gamma), xs, ws)
        p = BernsteinParams.ridge(gamma, sigma_var_sq=1.0, b_w=1.0, b_x_sq=np.eye(d), eps=0.1, nu=0.1, delta=0.1)
        sub = subgaussian_radius_sq(state, SubGaussianParams(sigma_subg_sq=1.0, delta=0.1, gamma=gamma))
        if sub.self_norm_sq <= sub.radius_sq:
            assert bernstein_alpha_upper(state, p, 1.0) >= bernstein_alpha(state, p.v, p.nu, p.sigma_var_eps_sq)
        report = ridge_radius_sq(state, p, 1.0)
        assert report.bound == "ridge_bernstein"
        assert report.delta_inflated
        assert report.self_norm_sq is None
        assert report.radius_sq > 0


class TestZForms:
    def test_zero_lambda(self, rng):
        state = observe_many(new_state(2, np.eye(2)), rng.standard_normal((5, 2)), rng.standard_normal(5))
        assert eval_z_linear(np.zeros(2), state) == 0.0
        assert eval_z_completed(np.zeros(2), state) == pytest.approx(0.0, abs=1e-12)

    def test_zero_sum(self, rng):
        xs = rng.standard_normal((5, 2))
        state = observe_many(new_state(2, np.eye(2)), xs, np.zeros(5))
        lam = rng.standard_normal(2)
        assert eval_z_linear(lam, state) == pytest.approx(-0.5 * lam @ xs.T @ xs @ lam)
        assert eval_z_linear(lam, state) <= 0.0

    def test_optimal_lambda_without_regularizer(self):
        state = observe(new_state(1, [[0.0]]), [2.0], 1.0)
        lam = np.array([0.5])
        assert eval_z_linear(lam, state) == pytest.approx(0.5)
        assert eval_z_completed(lam, state) == pytest.approx(0.5)

    def test_forms_agree(self, rng):
        for _ in range(200):
            d = int(rng.integers(1, 11))
            t = int(rng.integers(0, 3 * d))
            state = observe_many(new_state(d, random_pd(d, rng)), rng.standard_normal((t, d)), rng.standard_normal(t))
            lam = rng.standard_normal(d) * rng.uniform(0.1, 3.0)
            linear = eval_z_linear(lam, state)
            assert abs(linear - eval_z_completed(lam, state)) <= 1e-9 * (1.0 + abs(linear))


class TestGaussianKl:
    def test_identical(self):
        assert kl_gaussian(np.zeros(2), np.eye(2), np.eye(2)) == 0.0

    def test_scalar_example(self):
        assert kl_gaussian([0.0], [[1.0]], [[4.0]]) == pytest.approx(0.5 * (math.log(4.0) - 0.75))

    def test_matches_quadrature(self):
        mean, var_rho, var_pi = 0.7, 0.5, 2.0
        p = norm(loc=mean, scale=math.sqrt(var_rho))
        q = norm(loc=0.0, scale=math.sqrt(var_pi))
        width = 12 * math.sqrt(var_rho)
        value, _ = integrate.quad(lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x)), mean - width, mean + width)
        assert kl_gaussian([mean], [[var_rho]], [[var_pi]]) == pytest.approx(value, abs=1e-6)

    def test_nonnegative(self, rng):
        for _ in range(50):
            d = int(rng.integers(1, 5))
            assert kl_gaussian(rng.standard_normal(d), random_pd(d, rng), random_pd(d, rng)) >= 0.0

    def test_pac_bayes_terms_collapse_to_subgaussian(self, rng):
        gamma = random_pd(3, rng)
        state = observe_many(new_state(3, gamma), rng.standard_normal((10, 3)), rng.standard_normal(10))
        lhs, rhs = gaussian_pac_bayes_terms(state, np.linalg.inv(state.precision()), np.linalg.inv(gamma), 0.05)
        report = subgaussian_radius_sq(state, SubGaussianParams(sigma_subg_sq=1.0, delta=0.05, gamma=gamma))
        assert lhs == pytest.approx(report.self_norm_sq, rel=1e-9)
        assert rhs == pytest.approx(report.radius_sq, rel=1e-9)


class TestUniformKl:
    def test_identical(self, rng):
        e = Ellipsoid(center=np.zeros(2), shape=random_pd(2, rng))
        assert kl_uniform_ellipsoids(e, e) == pytest.approx(0.0, abs=1e-12)

    def test_scaled_shape(self, rng):
        shape = random_pd(2, rng)
        rho = Ellipsoid(center=np.zeros(2), shape=shape)
        pi = Ellipsoid(center=np.zeros(2), shape=4.0 * shape)
        assert kl_uniform_ellipsoids(rho, pi) == pytest.approx(math.log(4.0))

    def test_not_contained(self):
        rho = Ellipsoid(center=np.array([3.0, 0.0]), shape=np.eye(2))
        pi = Ellipsoid(center=np.zeros(2), shape=4.0 * np.eye(2))
        with pytest.raises(NotContained) as info:
            kl_uniform_ellipsoids(rho, pi)
        assert info.value.max_form > 1.0

    def test_second_moment(self):
        np.testing.assert_allclose(uniform_ellipsoid_second_moment([[1.0]]), [[1.0 / 3.0]])
        np.testing.assert_allclose(uniform_ellipsoid_second_moment(np.eye(2)), np.eye(2) / 4.0)


class TestPriors:
    def test_zero_sum_centers_posterior(self):
        p = scalar_bernstein()
        state = observe_many(new_state(1, [[10.0]]), np.ones((25, 1)), np.zeros(25))
        rho, pi = bernstein_priors(state, p)
        np.testing.assert_array_equal(rho.center, [0.0])
        np.testing.assert_array_equal(pi.center, [0.0])

    def test_isotropic_precision(self):
        d = 2
        p = BernsteinParams(
            sigma_var_sq=1.0, b_w=1.0, b_x_sq=np.eye(d), gamma=np.eye(d), v=np.eye(d), eps=0.1, nu=0.1, delta=0.1
        )
        state = observe_many(new_state(d, np.eye(d)), 2.0 * np.eye(d), [0.5, -0.5])
        rho, pi = bernstein_priors(state, p)
        np.testing.assert_allclose(rho.shape, (d + 2) / 5.0 * np.eye(d))
        np.testing.assert_allclose(pi.shape, (d + 2) / math.e * np.eye(d))


def test_empirical_variance():
    assert empirical_sigma_var_sq([1.0, -1.0, 0.0, 0.0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        empirical_sigma_var_sq([])
