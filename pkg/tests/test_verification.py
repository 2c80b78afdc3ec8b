import math

import numpy as np
import pytest

from selfnorm_core.errors import LambdaOutOfDomain
from selfnorm_core.models import BoundSpec, CovariateSpec, MatrixSpec, NoiseSpec, StoppingSpec, TrialSpec
from selfnorm_core.stream import new_state
from selfnorm_core.verification import (
    adversarial_instances,
    admissible_directions,
    check_alpha_sufficiency,
    check_containment_oracle,
    check_identities,
    check_leading_factor,
    check_second_moment,
    check_supermartingale,
    check_volume_ratio,
    clopper_pearson,
    coverage_experiment,
    realized_instances,
    resolve_trial,
    run_trial,
    spec_at_dim,
    tightness_comparison,
    trial_rngs,
)

from conftest import random_pd


def trial_spec(**overrides):
    fields = dict(
        d=2,
        stopping=StoppingSpec(horizon=50),
        noise=NoiseSpec(kind="rademacher"),
        covariates=CovariateSpec(kind="random_sphere"),
        bound=BoundSpec(kind="subgaussian", delta=0.1),
        seed=11,
    )
    fields.update(overrides)
    return TrialSpec(**fields)


def bernstein_spec(**overrides):
    bound = BoundSpec(
        kind="bernstein",
        delta=0.1,
        gamma=MatrixSpec.model_validate("identity:1.0"),
        v=MatrixSpec.model_validate("identity:15.0"),
    )
    return trial_spec(**{"stopping": StoppingSpec(horizon=200), "bound": bound, **overrides})


class TestRunTrial:
    def test_horizon_zero(self):
        outcome = run_trial(trial_spec(stopping=StoppingSpec(horizon=0)))
        assert outcome.stop_time == 0
        assert outcome.lhs == 0.0
        assert not outcome.violated

    def test_deterministic(self):
        first = run_trial(trial_spec(), index=3)
        again = run_trial(trial_spec(), index=3)
        assert first.lhs == again.lhs
        assert first.report == again.report

    def test_indices_give_different_paths(self):
        assert run_trial(trial_spec(), index=0).lhs != run_trial(trial_spec(), index=1).lhs

    def test_matches_flat_replay(self):
        spec = trial_spec(
            stopping=StoppingSpec(horizon=500),
            noise=NoiseSpec(kind="truncated_gaussian", b=3.0, s=1.0),
        )
        resolved = resolve_trial(spec)
        sigma_sq = resolved.noise.sigma_subg_sq
        for index in range(20):
            cov_rng, noise_rng = trial_rngs(spec.seed, index)
            xs = resolved.covariates.draw(cov_rng, 500)
            ws = resolved.noise.draw(noise_rng, 500)
            m = np.eye(2) + xs.T @ xs
            s = ws @ xs
            lhs = s @ np.linalg.solve(m, s)
            radius = sigma_sq * (np.linalg.slogdet(m)[1] + 2 * math.log(10.0))
            outcome = run_trial(resolved, index=index)
            assert outcome.lhs == pytest.approx(lhs, rel=1e-9)
            assert outcome.report.radius_sq == pytest.approx(radius, rel=1e-10)
            assert outcome.violated == (lhs > radius)

    def test_burnin_failure_is_an_outcome(self):
        spec = bernstein_spec(stopping=StoppingSpec(horizon=5))
        outcome = run_trial(spec)
        assert outcome.burnin_failed
        assert not outcome.violated


class TestCoverage:
    def test_clopper_pearson(self):
        assert clopper_pearson(0, 0) == (0.0, 1.0)
        lo, hi = clopper_pearson(0, 100)
        assert lo == 0.0
        assert hi == pytest.approx(1 - 0.025 ** (1 / 100), rel=1e-9)
        lo, hi = clopper_pearson(5, 100)
        assert lo < 0.05 < hi

    def test_huge_radius_never_fails(self):
        report = coverage_experiment(trial_spec(radius_scale=1e6), 30)
        assert report.failure_rate == 0.0
        assert report.n_covered == 30

    def test_zero_radius_always_fails(self):
        report = coverage_experiment(trial_spec(radius_scale=0.0), 30)
        assert report.failure_rate == 1.0

    @pytest.mark.slow
    def test_subgaussian_coverage_holds(self):
        spec = trial_spec(stopping=StoppingSpec(horizon=100))
        report = coverage_experiment(spec, 2000)
        assert report.n_burnin_failures == 0
        assert report.clopper_pearson_95[1] <= 0.1
        assert report.certified

    def test_logdet_stopping(self):
        spec = trial_spec(stopping=StoppingSpec(kind="logdet", horizon=300, threshold=2.0))
        outcome = run_trial(spec)
        assert 0 < outcome.stop_time < 300
        assert outcome.report.logdet_ratio >= 2.0

    @pytest.mark.slow
    def test_workers_do_not_change_results(self):
        spec = trial_spec()
        assert coverage_experiment(spec, 40, workers=1) == coverage_experiment(spec, 40, workers=2)

    @pytest.mark.slow
    def test_bernstein_coverage_certified(self):
        report = coverage_experiment(bernstein_spec(), 2000)
        admitted = report.n_trials - report.n_burnin_failures
        assert admitted >= 1900
        assert report.n_violations <= 0.1 * admitted
        assert report.certified

    def test_bernstein_coverage_counts_burnin(self):
        report = coverage_experiment(bernstein_spec(), 20)
        assert report.n_burnin_failures == 0
        assert report.n_covered + report.n_violations == 20


class TestSupermartingale:
    def test_zero_lambda(self, rng):
        estimate = check_supermartingale(np.zeros(2), trial_spec(), 0.1, 100, rng)
        assert estimate.mean == 1.0
        assert estimate.std_err == 0.0

    def test_no_samples(self, rng):
        estimate = check_supermartingale(np.array([0.05, 0.0]), trial_spec(), 0.1, 0, rng)
        assert estimate.mean == 1.0
        assert estimate.n == 0

    def test_lambda_out_of_domain(self, rng):
        eps = 0.1
        with pytest.raises(LambdaOutOfDomain) as info:
            check_supermartingale(np.array([eps * math.sqrt(1.01), 0.0]), trial_spec(), eps, 10, rng)
        assert info.value.norm_sq == pytest.approx(1.01 * eps**2)

    def test_admissible_directions_fill_domain(self, rng):
        spec = trial_spec(noise=NoiseSpec(kind="uniform", b=2.0))
        for lam in admissible_directions(spec, 0.2, 5, rng):
            assert float(lam @ lam) * 4.0 == pytest.approx(0.04)

    def test_two_point_noise(self, rng):
        spec = trial_spec(
            d=1,
            stopping=StoppingSpec(horizon=100),
            noise=NoiseSpec(kind="two_point", b=1.0, p=0.1),
        )
        for lam in admissible_directions(spec, 0.1, 3, rng):
            estimate = check_supermartingale(lam, spec, 0.1, 20_000, rng)
            assert estimate.passes()


class TestClosedFormSuites:
    def test_second_moment_interval(self, rng):
        assert check_second_moment([[1.0]], 200_000, rng) <= 0.01

    def test_second_moment_random_shape(self, rng):
        assert check_second_moment(random_pd(3, rng), 200_000, rng) <= 0.02

    def test_second_moment_without_samples(self, rng):
        assert check_second_moment(np.eye(2), 0, rng) == pytest.approx(1.0)

    def test_identities(self, rng):
        result = check_identities(200, rng)
        assert result.passed, result

    def test_volume_ratio(self, rng):
        result = check_volume_ratio(40, rng)
        assert result.passed, result
        assert result.n_raised == 40

    def test_leading_factor(self):
        result = check_leading_factor(10_000)
        assert result.passed
        assert result.max_ratio == pytest.approx(1.0)

    def test_containment_oracle(self, rng):
        result = check_containment_oracle(40, rng)
        assert result.passed, result


class TestAlphaSufficiency:
    @pytest.mark.parametrize("d", [1, 2, 5])
    def test_adversarial_instances(self, rng, d):
        report = check_alpha_sufficiency(adversarial_instances(d, 25, rng))
        assert report.n_skipped == 0
        assert report.passed
        assert report.n_sufficient == report.n_admitted == 25

    def test_realized_instances(self, rng):
        instances = realized_instances(bernstein_spec(), 10, rng)
        assert len(instances) == 10
        report = check_alpha_sufficiency(instances)
        assert report.passed
        assert report.n_containment_failures == 0

    def test_realized_instances_in_other_dims(self, rng):
        spec = spec_at_dim(bernstein_spec(), 1)
        assert spec.d == 1
        instances = realized_instances(spec, 5, rng)
        assert len(instances) == 5
        assert {state.d for state, _ in instances} == {1}
        assert check_alpha_sufficiency(instances).passed

    def test_spec_at_dim_keeps_pinned_specs(self):
        assert spec_at_dim(bernstein_spec(), 2) == bernstein_spec()
        pinned = trial_spec(covariates=CovariateSpec(kind="fixed_design", vectors=[[1.0, 0.0], [0.0, 1.0]]))
        assert spec_at_dim(pinned, 3) is None
        diag = trial_spec(bound=BoundSpec(gamma=MatrixSpec.model_validate("diag:[1.0, 2.0]")))
        assert spec_at_dim(diag, 3) is None

    def test_failing_instances_are_skipped(self, rng):
        spec = bernstein_spec(stopping=StoppingSpec(horizon=5))
        resolved = resolve_trial(spec)
        instances = realized_instances(spec, 3, rng, max_attempts=3)
        assert instances == []
        report = check_alpha_sufficiency([(new_state(2, resolved.gamma), resolved.params)])
        assert report.n_skipped == 1
        assert report.n_admitted == 0


class TestTightness:
    def test_rows(self):
        rows = tightness_comparison(bernstein_spec(), horizons=[200], n_trials=5)
        assert len(rows) == 1
        row = rows[0]
        assert row.burnin_failure_rate == 0.0
        assert row.ratio == pytest.approx(row.mean_radius_sq_bernstein / row.mean_radius_sq_subgaussian)
        assert row.predicted_ratio == pytest.approx(1.0 / 0.9)

    def test_all_burnin_failures(self):
        rows = tightness_comparison(bernstein_spec(), horizons=[5], n_trials=3)
        assert rows[0].ratio is None
        assert rows[0].burnin_failure_rate == 1.0

    @pytest.mark.slow
    def test_low_variance_noise_shrinks_the_radius(self):
        matched = "identity:300.0"
        spec = trial_spec(
            noise=NoiseSpec(kind="two_point", b=1.0, p=0.05),
            bound=BoundSpec(
                kind="bernstein",
                delta=0.1,
                gamma=MatrixSpec.model_validate(matched),
                v=MatrixSpec.model_validate(matched),
                eps=0.1,
                nu=0.1,
            ),
        )
        (row,) = tightness_comparison(spec, horizons=[10_000], n_trials=50)
        assert row.burnin_failure_rate == 0.0
        assert 0.04 <= row.ratio <= 0.12
        assert row.predicted_ratio == pytest.approx(0.05 / 0.9)
