import numpy as np
import pytest

from selfnorm_core.errors import DimensionMismatch
from selfnorm_core.models import CovariateSpec, MatrixSpec, NoiseSpec
from selfnorm_core.simulation import (
    AR1,
    FixedDesign,
    RademacherNoise,
    RandomSphere,
    TwoPointNoise,
    clip_rows,
    create_covariates,
    create_noise,
)


class TestNoise:
    @pytest.mark.parametrize(
        "spec",
        [
            NoiseSpec(kind="rademacher", b=2.0),
            NoiseSpec(kind="two_point", b=1.5, p=0.3),
            NoiseSpec(kind="truncated_gaussian", b=1.0, s=0.7),
            NoiseSpec(kind="uniform", b=0.5),
        ],
    )
    def test_bounded_centered_with_stated_variance(self, spec, rng):
        noise = create_noise(spec)
        ws = noise.draw(rng, 200_000)
        assert ws.shape == (200_000,)
        assert np.all(np.abs(ws) <= noise.b_w)
        assert abs(ws.mean()) <= 5 * noise.b_w / np.sqrt(ws.size)
        assert np.mean(ws * ws) == pytest.approx(noise.sigma_var_sq, rel=0.02)
        assert noise.sigma_var_sq <= noise.b_w**2

    def test_rademacher_values(self, rng):
        ws = RademacherNoise(NoiseSpec(b=3.0)).draw(rng, 100)
        assert set(np.unique(ws)) <= {-3.0, 3.0}

    def test_two_point_variance(self):
        assert TwoPointNoise(NoiseSpec(kind="two_point", b=2.0, p=0.05)).sigma_var_sq == pytest.approx(0.2)

    def test_batch_shape(self, rng):
        assert create_noise(NoiseSpec()).draw(rng, 7, n_paths=3).shape == (3, 7)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="Available"):
            create_noise(NoiseSpec.model_construct(kind="cauchy", b=1.0))


class TestCovariates:
    def test_clip_rows(self):
        x = np.array([[3.0, 4.0], [0.3, 0.4], [0.0, 0.0]])
        np.testing.assert_allclose(clip_rows(x, 1.0), [[0.6, 0.8], [0.3, 0.4], [0.0, 0.0]])

    def test_fixed_design_cycles(self, rng):
        model = FixedDesign(CovariateSpec(kind="fixed_design", vectors=[[1.0, 0.0], [0.0, 2.0]]), 2)
        xs = model.draw(rng, 5)
        np.testing.assert_array_equal(xs[:, 1], [0.0, 2.0, 0.0, 2.0, 0.0])
        assert model.radius == 2.0
        np.testing.assert_array_equal(model.b_x_sq, 4.0 * np.eye(2))

    def test_fixed_design_dimension(self):
        with pytest.raises(DimensionMismatch):
            create_covariates(CovariateSpec(kind="fixed_design", vectors=[[1.0, 0.0, 0.0]]), 2)

    def test_random_sphere(self, rng):
        model = RandomSphere(CovariateSpec(kind="random_sphere", radius=2.0), 3)
        xs = model.draw(rng, 50, n_paths=4)
        assert xs.shape == (4, 50, 3)
        np.testing.assert_allclose(np.linalg.norm(xs, axis=-1), 2.0)

    def test_ar1_stays_in_ball(self, rng):
        spec = CovariateSpec(kind="ar1", a=MatrixSpec.model_validate("identity:0.9"), innovation=1.0, radius=1.0)
        model = AR1(spec, 2)
        xs = model.draw(rng, 500)
        assert xs.shape == (500, 2)
        assert np.all(np.linalg.norm(xs, axis=1) <= 1.0 + 1e-12)

    def test_draws_are_reproducible(self):
        spec = CovariateSpec()
        first = create_covariates(spec, 2).draw(np.random.default_rng(3), 10)
        again = create_covariates(spec, 2).draw(np.random.default_rng(3), 10)
        np.testing.assert_array_equal(first, again)
