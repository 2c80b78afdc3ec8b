"""Noise and covariate models for simulated self-normalized processes."""

from __future__ import annotations

from ..models import CovariateSpec, NoiseSpec

from .covariates import AR1, CovariateModel, FixedDesign, RandomSphere, clip_rows
from .noise import NoiseModel, RademacherNoise, TruncatedGaussianNoise, TwoPointNoise, UniformNoise

NOISE_MODELS: dict[str, type[NoiseModel]] = {
    "rademacher": RademacherNoise,
    "two_point": TwoPointNoise,
    "truncated_gaussian": TruncatedGaussianNoise,
    "uniform": UniformNoise,
}

COVARIATE_MODELS: dict[str, type[CovariateModel]] = {
    "fixed_design": FixedDesign,
    "random_sphere": RandomSphere,
    "ar1": AR1,
}


def create_noise(spec: NoiseSpec) -> NoiseModel:
    """Create a noise sampler for the given spec."""
    model_class = NOISE_MODELS.get(spec.kind)
    if model_class is None:
        available = ", ".join(sorted(NOISE_MODELS))
        raise ValueError(f"Unknown noise kind '{spec.kind}'. Available: {available}")
    return model_class(spec)


def create_covariates(spec: CovariateSpec, d: int) -> CovariateModel:
    """Create a covariate sampler for the given spec in dimension ``d``."""
    model_class = COVARIATE_MODELS.get(spec.kind)
    if model_class is None:
        available = ", ".join(sorted(COVARIATE_MODELS))
        raise ValueError(f"Unknown covariate kind '{spec.kind}'. Available: {available}")
    return model_class(spec, d)


__all__ = [
    "NoiseModel",
    "RademacherNoise",
    "TwoPointNoise",
    "TruncatedGaussianNoise",
    "UniformNoise",
    "CovariateModel",
    "FixedDesign",
    "RandomSphere",
    "AR1",
    "clip_rows",
    "create_noise",
    "create_covariates",
    "NOISE_MODELS",
    "COVARIATE_MODELS",
]
