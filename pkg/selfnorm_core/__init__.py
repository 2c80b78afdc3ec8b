"""selfnorm core - confidence radii for self-normalized martingales.

Streaming (S_t, V_t) accumulation, the sub-Gaussian and Bernstein radii,
a Monte Carlo verification harness, and least-squares / bandit experiments.
"""

from .errors import (
    BurninViolated,
    ConfigError,
    DimensionMismatch,
    GammaSingular,
    LambdaOutOfDomain,
    NotContained,
    NotPositiveDefinite,
    NotPSD,
    SelfNormError,
    SingularGram,
)
from .linalg import (
    CholFactor,
    Ellipsoid,
    cholesky,
    containment_max,
    ellipsoid_contains,
    psd_order_leq,
    quad_form,
    quad_form_inv,
    rank_one_update,
    sample_uniform_ellipsoid,
    solve,
)
from .stream import (
    MartingaleState,
    StoppingRule,
    cross_norm_sq,
    fixed_horizon,
    logdet_gain,
    logdet_gain_at_least,
    new_state,
    observe,
    observe_many,
    read_observation_log,
    rebase,
    run_until,
    self_norm_at_least,
    self_norm_sq,
    stop_index,
    write_observation_log,
)
from .models import (
    BernsteinParams,
    BoundReport,
    BoundSpec,
    CovariateSpec,
    CoverageReport,
    LeadingFactorMode,
    MatrixSpec,
    NoiseSpec,
    RunConfig,
    StoppingSpec,
    SubGaussianParams,
    TrialSpec,
)
from .bounds import (
    bernstein_alpha,
    bernstein_alpha_upper,
    bernstein_radius_sq,
    burnin_check,
    empirical_sigma_var_sq,
    eval_z_completed,
    eval_z_linear,
    kl_gaussian,
    kl_uniform_ellipsoids,
    leading_factor,
    ridge_radius_sq,
    subgaussian_radius_sq,
    subgaussian_unregularized_bound,
    bernstein_priors,
    uniform_ellipsoid_second_moment,
)
from .simulation import create_covariates, create_noise
from .verification import (
    check_alpha_sufficiency,
    check_second_moment,
    check_supermartingale,
    coverage_experiment,
    run_trial,
    tightness_comparison,
)
from .experiments import BanditEnv, LinearModel, RegretTrace, confidence_ellipsoid, oful_run, ridge_estimate
from .registry import ConfigRegistry, get_registry
from .runner import CommandResult, apply_overrides, cmd_experiment, cmd_radius, cmd_verify, run_command

__all__ = [
    # Errors
    "SelfNormError",
    "NotPositiveDefinite",
    "DimensionMismatch",
    "NotPSD",
    "SingularGram",
    "GammaSingular",
    "BurninViolated",
    "NotContained",
    "LambdaOutOfDomain",
    "ConfigError",
    # Linear algebra
    "CholFactor",
    "Ellipsoid",
    "cholesky",
    "rank_one_update",
    "solve",
    "quad_form",
    "quad_form_inv",
    "psd_order_leq",
    "sample_uniform_ellipsoid",
    "containment_max",
    "ellipsoid_contains",
    # Stream
    "MartingaleState",
    "StoppingRule",
    "new_state",
    "observe",
    "observe_many",
    "rebase",
    "self_norm_sq",
    "cross_norm_sq",
    "logdet_gain",
    "fixed_horizon",
    "logdet_gain_at_least",
    "self_norm_at_least",
    "run_until",
    "stop_index",
    "read_observation_log",
    "write_observation_log",
    # Models
    "SubGaussianParams",
    "BernsteinParams",
    "BoundReport",
    "LeadingFactorMode",
    "MatrixSpec",
    "NoiseSpec",
    "CovariateSpec",
    "StoppingSpec",
    "BoundSpec",
    "TrialSpec",
    "CoverageReport",
    "RunConfig",
    # Bounds
    "subgaussian_radius_sq",
    "subgaussian_unregularized_bound",
    "bernstein_alpha",
    "bernstein_alpha_upper",
    "burnin_check",
    "bernstein_radius_sq",
    "ridge_radius_sq",
    "leading_factor",
    "eval_z_linear",
    "eval_z_completed",
    "kl_gaussian",
    "kl_uniform_ellipsoids",
    "uniform_ellipsoid_second_moment",
    "bernstein_priors",
    "empirical_sigma_var_sq",
    # Simulation
    "create_noise",
    "create_covariates",
    # Verification
    "run_trial",
    "coverage_experiment",
    "check_supermartingale",
    "check_second_moment",
    "check_alpha_sufficiency",
    "tightness_comparison",
    # Experiments
    "LinearModel",
    "BanditEnv",
    "RegretTrace",
    "ridge_estimate",
    "confidence_ellipsoid",
    "oful_run",
    # Registry
    "ConfigRegistry",
    "get_registry",
    # Runner
    "CommandResult",
    "apply_overrides",
    "run_command",
    "cmd_radius",
    "cmd_verify",
    "cmd_experiment",
]
