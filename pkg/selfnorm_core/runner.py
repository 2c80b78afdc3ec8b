"""Command bodies for the selfnorm CLI.

Each command validates its whole input first, computes, and only then writes
files, so a rejected config never leaves partial output behind.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from .bounds import bernstein_radius_sq, subgaussian_radius_sq, subgaussian_unregularized_report
from .errors import BurninViolated, ConfigError, DimensionMismatch, NotPositiveDefinite
from .experiments import bandit_env, compare_providers, create_provider, eps_nu_sweep, oful_run, ridge_coverage
from .linalg import default_psd_tol
from .models import ALL_SUITES, NoiseSpec, RunConfig, StoppingSpec, SubGaussianParams, TrialSpec
from .simulation import create_covariates, create_noise
from .stream import new_state, observe_many, read_observation_log
from .verification import (
    adversarial_instances,
    admissible_directions,
    bernstein_params,
    check_alpha_sufficiency,
    check_containment_oracle,
    check_identities,
    check_leading_factor,
    check_second_moment,
    check_supermartingale,
    check_volume_ratio,
    coverage_experiment,
    realized_instances,
    resolve_trial,
    spec_at_dim,
    tightness_comparison,
)
from .writers import render_report, write_csv, write_json

logger = logging.getLogger("selfnorm.runner")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BURNIN = 3
EXIT_FALSIFIED = 4


@dataclass
class CommandResult:
    exit_code: int
    message: str
    outputs: list[Path] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.exit_code == EXIT_OK


def format_error(exc: Exception) -> str:
    """One line per invalid field, prefixed with its dotted path."""
    if isinstance(exc, ValidationError):
        return "\n".join(
            f"{'.'.join(str(part) for part in error['loc']) or exc.title}: {error['msg']}" for error in exc.errors()
        )
    if isinstance(exc, ConfigError) and exc.field_path:
        return f"{exc.field_path}: {exc}"
    return str(exc)


def apply_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Return ``config`` with dotted-path fields replaced and revalidated."""
    data = config.model_dump(mode="json")
    for dotted, value in overrides.items():
        if value is None:
            continue
        target = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            target = target.setdefault(part, {})
        target[leaf] = value
    return RunConfig.model_validate(data)


def derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


def suite_rng(seed: int, name: str) -> np.random.Generator:
    """Per-suite generator, independent of which other suites run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ALL_SUITES.index(name),)))


# radius


def _check_log_bounds(xs: np.ndarray, ws: np.ndarray, b_w: float, b_x_sq: np.ndarray) -> None:
    tol = 1e-12
    bad_w = np.flatnonzero(np.abs(ws) > b_w * (1.0 + tol))
    if bad_w.size:
        row = int(bad_w[0]) + 1
        raise ConfigError(f"|w| = {abs(ws[row - 1]):.6g} exceeds b_w = {b_w:.6g}", field_path=f"log:row {row}")
    inv = np.linalg.inv(b_x_sq)
    forms = np.einsum("ti,ij,tj->t", xs, inv, xs)
    bad_x = np.flatnonzero(forms > 1.0 + default_psd_tol(inv))
    if bad_x.size:
        row = int(bad_x[0]) + 1
        raise ConfigError("x x^T exceeds b_x_sq", field_path=f"log:row {row}")


def cmd_radius(config: RunConfig) -> CommandResult:
    """Replay an observation log and report the configured radius."""
    if not config.output.log_path:
        raise ConfigError("radius needs an observation log", field_path="output.log_path")
    xs, ws = read_observation_log(Path(config.output.log_path))
    d = xs.shape[1]
    spec = config.trial_spec(d=d)
    gamma = spec.bound.gamma.to_array(d)
    noise = create_noise(spec.noise)
    if spec.bound.kind == "bernstein":
        params = bernstein_params(spec, noise, create_covariates(spec.covariates, d))
        _check_log_bounds(xs, ws, params.b_w, params.b_x_sq)
    else:
        sigma = spec.bound.sigma_subg_sq if spec.bound.sigma_subg_sq is not None else noise.sigma_subg_sq
        params = SubGaussianParams(sigma_subg_sq=sigma, delta=spec.bound.delta, gamma=gamma)
    state = observe_many(new_state(d, gamma), xs, ws)

    exit_code = EXIT_OK
    if spec.bound.kind == "subgaussian":
        report = subgaussian_radius_sq(state, params)
    elif spec.bound.kind == "unregularized":
        report = subgaussian_unregularized_report(state, params)
    else:
        try:
            report = bernstein_radius_sq(state, params)
        except BurninViolated as exc:
            report = exc.report
            exit_code = EXIT_BURNIN
            logger.error(f"Burn-in violated: {', '.join(exc.failed_conditions)}")

    payload = {"t": state.t, "d": d, **report.model_dump()}
    out = write_json(Path(config.output.out_dir) / "radius_report.json", payload)
    message = render_report(payload)
    if exit_code == EXIT_BURNIN:
        message = (
            f"burn-in violated (data margin {report.data_margin!r}, static margin {report.static_margin!r})\n" + message
        )
    return CommandResult(exit_code=exit_code, message=message, outputs=[out], summary=payload)


# verify


@dataclass
class SuiteResult:
    name: str
    passed: bool
    summary: dict[str, Any]
    rows: list[dict[str, Any]]


def _rows(items: list[Any]) -> list[dict[str, Any]]:
    return [dataclasses.asdict(item) for item in items]


def _random_shape(d: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((d, d))
    return a @ a.T / d + 0.1 * np.eye(d)


def suite_identities(config: RunConfig, rng: np.random.Generator) -> SuiteResult:
    result = check_identities(config.verify.n, rng)
    summary = dataclasses.asdict(result)
    return SuiteResult("identities", result.passed, summary, [summary])


def suite_second_moment(config: RunConfig, rng: np.random.Generator) -> SuiteResult:
    n = config.verify.n
    tol = max(0.02, 6.0 / math.sqrt(max(n, 1)))
    rows = []
    for d in config.verify.dims:
        error = check_second_moment(_random_shape(d, rng), n, rng)
        rows.append({"d": d, "n": n, "relative_error": error, "tolerance": tol, "passed": error <= tol})
    passed = all(row["passed"] for row in rows)
    return SuiteResult("second_moment", passed, {"n": n, "tolerance": tol, "max_error": max(r["relative_error"] for r in rows)}, rows)


def suite_volume(config: RunConfig, rng: np.random.Generator) -> SuiteResult:
    result = check_volume_ratio(config.verify.n, rng, dims=config.verify.dims)
    summary = dataclasses.asdict(result)
    return SuiteResult("volume", result.passed, summary, [summary])


def suite_leading_factor(config: RunConfig, rng: np.random.Generator) -> SuiteResult:
    result = check_leading_factor()
    summary = dataclasses.asdict(result)
    return SuiteResult("leading_factor", result.passed, summary, [summary])


def suite_oracle(config: RunConfig, rng: np.random.Generator) -> SuiteResult:
    result = check_containment_oracle(config.verify.instances, rng, dims=config.verify.dims)
    summary = dataclasses.asdict(result)
    return SuiteResult("oracle", result.passed, summary, [summary])


def martingale_cells(config: RunConfig) -> list[tuple[dict[str, Any], TrialSpec]]:
    """Noise x horizon x stopping-rule grid the supermartingale suite walks."""
    spec = config.trial_spec()
    b = config.noise.b
    noises = [
        NoiseSpec(kind="rademacher", b=b),
        NoiseSpec(kind="two_point", b=b, p=0.05),
        NoiseSpec(kind="truncated_gaussian", b=b, s=0.5 * b),
        NoiseSpec(kind="uniform", b=b),
    ]
    # noise scalars come from each cell's noise model
    bound = spec.bound.model_copy(update={"sigma_var_sq": None, "b_w": None, "sigma_subg_sq": None})
    cells = []
    for noise in noises:
        for horizon in config.verify.martingale_horizons:
            for stopping in (
                StoppingSpec(kind="horizon", horizon=horizon),
                StoppingSpec(kind="logdet", horizon=horizon, threshold=config.verify.logdet_threshold),
            ):
                label = {"noise": noise.kind, "horizon": horizon, "stopping": stopping.kind}
                cells.append((label, spec.model_copy(update={"noise": noise, "stopping": stopping, "bound": bound})))
    return cells


def suite_supermartingale(config: RunConfig, rng: np.random.Generator) -> SuiteResult:
    eps = config.bound.eps
    rows = []
    for label, spec in martingale_cells(config):
        for i, lam in enumerate(admissible_directions(spec, eps, config.verify.lambda_directions, rng)):
            estimate = check_supermartingale(lam, spec, eps, config.verify.n, rng)
            rows.append(
                {
                    **label,
                    "direction": i,
                    "lambda": " ".join(format(v, ".17g") for v in lam),
                    "mean": estimate.mean,
                    "std_err": estimate.std_err,
                    "passed": estimate.passes(),
                }
            )
    passed = all(row["passed"] for row in rows)
    summary = {
        "eps": eps,
        "n": config.verify.n,
        "cells": len(rows) // config.verify.lambda_directions,
        "directions": config.verify.lambda_directions,
        "max_mean": max((r["mean"] for r in rows), default=1.0),
    }
    return SuiteResult("supermartingale", passed, summary, rows)


def suite_coverage(config: RunConfig, rng: np.random.Generator) -> SuiteResult:
    """Coverage per delta; passes only when every Clopper-Pearson upper bound is <= delta.

    ``falsified`` (lower bound above delta) is reported as a diagnostic.
    """
    spec = config.trial_spec()
    rows = []
    for delta in config.verify.deltas:
        cell = spec.model_copy(update={"bound": spec.bound.model_copy(update={"delta": delta})})
        report = coverage_experiment(cell, config.simulation.n_trials, workers=config.simulation.workers)
        lo, hi = report.clopper_pearson_95
        rows.append(
            {
                "bound": spec.bound.kind,
                **report.model_dump(exclude={"clopper_pearson_95"}),
                "ci_lower": lo,
                "ci_upper": hi,
                "certified": report.certified,
                "falsified": lo > delta,
            }
        )
    passed = all(row["certified"] for row in rows)
    summary = {
        "bound": spec.bound.kind,
        "n_trials": config.simulation.n_trials,
        "certified": passed,
        "falsified": any(row["falsified"] for row in rows),
    }
    return SuiteResult("coverage", passed, summary, rows)


def suite_containment(config: RunConfig, rng: np.random.Generator) -> SuiteResult:
    spec = config.trial_spec()
    dims = config.verify.dims or [spec.d]
    realized = max(1, config.verify.instances // (2 * len(dims)))
    instances = []
    realized_counts = {}
    for d in dims:
        moved = spec_at_dim(spec, d)
        if moved is None:
            logger.warning(f"Trial pins d={spec.d} vectors or matrices, no realized instances at d={d}")
            continue
        found = realized_instances(moved, realized, rng)
        realized_counts[str(d)] = len(found)
        instances.extend(found)
    per_dim = max(1, (config.verify.instances - len(instances)) // len(dims))
    for d in dims:
        instances.extend(adversarial_instances(d, per_dim, rng, eps=spec.bound.eps, nu=spec.bound.nu))
    report = check_alpha_sufficiency(instances)
    summary = {
        "n_admitted": report.n_admitted,
        "n_skipped": report.n_skipped,
        "n_containment_failures": report.n_containment_failures,
        "n_sufficient": report.n_sufficient,
        "n_sufficient_literal": report.n_sufficient_literal,
        "n_implication_failures": report.n_implication_failures,
        "n_realized": realized_counts,
    }
    return SuiteResult("containment", report.passed, summary, _rows(report.records))


def suite_tightness(config: RunConfig, rng: np.random.Generator) -> SuiteResult:
    """Informational: radii ratios have a predicted trend but no pass/fail threshold."""
    rows = tightness_comparison(
        config.trial_spec(),
        horizons=config.experiment.horizons,
        eps_grid=config.experiment.eps_grid,
        nu_grid=config.experiment.nu_grid,
        n_trials=config.simulation.n_trials,
        workers=config.simulation.workers,
    )
    return SuiteResult("tightness", True, {"cells": len(rows)}, _rows(rows))


SUITES: dict[str, Callable[[RunConfig, np.random.Generator], SuiteResult]] = {
    "identities": suite_identities,
    "second_moment": suite_second_moment,
    "volume": suite_volume,
    "leading_factor": suite_leading_factor,
    "oracle": suite_oracle,
    "supermartingale": suite_supermartingale,
    "coverage": suite_coverage,
    "containment": suite_containment,
    "tightness": suite_tightness,
}


def _validate_trial(config: RunConfig) -> TrialSpec:
    spec = config.trial_spec()
    resolve_trial(spec)
    return spec


def cmd_verify(config: RunConfig) -> CommandResult:
    """Run the selected suites; exit 4 names every falsified one."""
    if not config.verify.suites:
        raise ConfigError("no verification suites selected", field_path="verify.suites")
    if any(name in ("coverage", "supermartingale", "containment", "tightness") for name in config.verify.suites):
        _validate_trial(config)

    results = []
    for name in config.verify.suites:
        logger.debug(f"Running suite '{name}'")
        results.append(SUITES[name](config, suite_rng(config.simulation.seed, name)))

    out_dir = Path(config.output.out_dir)
    outputs = [write_csv(out_dir / f"verify_{result.name}.csv", result.rows) for result in results]
    failed = [result.name for result in results if not result.passed]
    summary = {
        "seed": config.simulation.seed,
        "passed": not failed,
        "failed": failed,
        "suites": {result.name: {"passed": result.passed, **result.summary} for result in results},
    }
    outputs.append(write_json(out_dir / "verify_summary.json", summary))
    if failed:
        logger.error(f"Falsified: {', '.join(failed)}")
        message = "FAILED: " + ", ".join(failed)
    else:
        message = "passed: " + ", ".join(result.name for result in results)
    return CommandResult(
        exit_code=EXIT_FALSIFIED if failed else EXIT_OK, message=message, outputs=outputs, summary=summary
    )


# experiment


def _experiment_bandit(config: RunConfig) -> tuple[dict[str, list[dict[str, Any]]], dict[str, Any]]:
    exp = config.experiment
    env = bandit_env(exp.arms, exp.theta_star, config.noise)
    gamma = config.bound.gamma.to_array(env.d)
    horizon = config.simulation.stopping.horizon
    options = {
        "delta": config.bound.delta,
        "eps": config.bound.eps,
        "nu": config.bound.nu,
        "fixed_radius": exp.fixed_radius,
        "theta_bound": exp.theta_bound,
    }
    providers = {name: create_provider(name, env, gamma, **options) for name in exp.providers}
    seeds = [derived_seed(config.simulation.seed, i) for i in range(exp.n_seeds)]

    tables: dict[str, list[dict[str, Any]]] = {}
    for name, provider in providers.items():
        tables[f"bandit_trace_{name}"] = oful_run(env, provider, horizon, seeds[0], gamma).to_rows()
    totals = compare_providers(
        env, exp.providers, gamma, horizon=horizon, seeds=seeds, workers=config.simulation.workers, **options
    )
    tables["bandit_regret"] = [
        {"provider": name, "seed": seed, "total_regret": regret}
        for name in exp.providers
        for seed, regret in zip(seeds, totals[name])
    ]
    meta = {
        "kind": "bandit",
        "arms": exp.arms,
        "theta_star": exp.theta_star,
        "noise": config.noise,
        "gamma": config.bound.gamma,
        "horizon": horizon,
        "seeds": seeds,
        "mean_total_regret": {name: float(np.mean(totals[name])) for name in exp.providers},
        **options,
    }
    return tables, meta


def _experiment_ridge(config: RunConfig) -> tuple[dict[str, list[dict[str, Any]]], dict[str, Any]]:
    spec = config.trial_spec()
    result = ridge_coverage(
        spec, config.experiment.theta_star, config.simulation.n_trials, workers=config.simulation.workers
    )
    lo, hi = result.coverage.clopper_pearson_95
    row = {
        **result.coverage.model_dump(exclude={"clopper_pearson_95"}),
        "ci_lower": lo,
        "ci_upper": hi,
        "max_identity_residual": result.max_identity_residual,
    }
    return {"ridge_coverage": [row]}, {"kind": "ridge_coverage", "spec": spec, **row}


def _experiment_tightness(config: RunConfig) -> tuple[dict[str, list[dict[str, Any]]], dict[str, Any]]:
    exp = config.experiment
    rows = tightness_comparison(
        config.trial_spec(),
        horizons=exp.horizons,
        eps_grid=exp.eps_grid,
        nu_grid=exp.nu_grid,
        n_trials=config.simulation.n_trials,
        workers=config.simulation.workers,
    )
    return {"tightness": _rows(rows)}, {"kind": "tightness", "spec": config.trial_spec()}


def _experiment_sweep(config: RunConfig) -> tuple[dict[str, list[dict[str, Any]]], dict[str, Any]]:
    exp = config.experiment
    rows = eps_nu_sweep(
        config.trial_spec(), exp.eps_grid, exp.nu_grid, config.simulation.n_trials, workers=config.simulation.workers
    )
    return {"sweep": _rows(rows)}, {"kind": "sweep", "spec": config.trial_spec(), "post_hoc": True}


EXPERIMENTS = {
    "bandit": _experiment_bandit,
    "ridge_coverage": _experiment_ridge,
    "tightness": _experiment_tightness,
    "sweep": _experiment_sweep,
}


def cmd_experiment(config: RunConfig) -> CommandResult:
    """Run the configured experiment and write its tables plus a metadata file."""
    kind = config.experiment.kind
    if kind == "bandit":
        bandit_env(config.experiment.arms, config.experiment.theta_star, config.noise)
    else:
        _validate_trial(config)
    tables, meta = EXPERIMENTS[kind](config)
    out_dir = Path(config.output.out_dir)
    outputs = [write_csv(out_dir / f"{name}.csv", rows) for name, rows in tables.items()]
    outputs.append(write_json(out_dir / f"{kind}_meta.json", meta))
    return CommandResult(exit_code=EXIT_OK, message=f"wrote {len(outputs)} files to {out_dir}", outputs=outputs, summary=meta)


COMMANDS: dict[str, Callable[[RunConfig], CommandResult]] = {
    "radius": cmd_radius,
    "verify": cmd_verify,
    "experiment": cmd_experiment,
}


def run_command(config: RunConfig) -> CommandResult:
    """Dispatch ``config.command`` and map input errors to exit code 2."""
    try:
        return COMMANDS[config.command](config)
    except (ValidationError, ConfigError, DimensionMismatch, NotPositiveDefinite) as exc:
        message = format_error(exc)
        logger.error(f"Invalid configuration: {message}")
        return CommandResult(exit_code=EXIT_CONFIG, message=message)
