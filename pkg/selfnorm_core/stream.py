"""Streaming accumulation of the self-normalized pair (S_t, V_t).

S_t = sum_k W_k X_k and V_t = sum_k X_k X_k^T are kept next to the Cholesky
factor of V_t + Gamma, which is updated by rank-one steps and refreshed from
the dense accumulation every ``REFRESH_INTERVAL`` updates.

Callers must feed X_k before W_k is drawn (X predictable, W a martingale
difference); the stream cannot check this.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from .errors import ConfigError, DimensionMismatch, NotPositiveDefinite, NotPSD, SingularGram
from .linalg import (
    Array,
    CholFactor,
    as_vector,
    cholesky,
    default_psd_tol,
    quad_form_inv,
    rank_one_update,
    solve,
    sym_matrix,
)

logger = logging.getLogger("selfnorm.stream")

REFRESH_INTERVAL = 10_000
LOG_DIGITS = 17


def _frozen(a: np.ndarray) -> Array:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MartingaleState:
    """Value snapshot of one stream after ``t`` observations."""

    d: int
    t: int
    s: Array
    gram: Array
    regularizer: Array
    gram_chol: CholFactor | None
    regularizer_logdet: float | None = None
    updates_since_refresh: int = 0
    log: tuple[tuple[Array, float], ...] | None = field(default=None, repr=False)

    @property
    def is_definite(self) -> bool:
        return self.gram_chol is not None

    @property
    def gram_logdet(self) -> float:
        """log det(V_t + Gamma)."""
        return self._chol().logdet

    def _chol(self) -> CholFactor:
        if self.gram_chol is None:
            raise SingularGram(f"V_t + Gamma is not positive definite yet (t={self.t})")
        return self.gram_chol

    def precision(self) -> Array:
        """Dense V_t + Gamma."""
        return self.gram + self.regularizer


def _try_factor(m: Array) -> CholFactor | None:
    try:
        return cholesky(m)
    except NotPositiveDefinite:
        return None


def new_state(d: int, gamma: ArrayLike, *, keep_log: bool = False) -> MartingaleState:
    """Fresh state with S_0 = 0 and V_0 = 0.

    Raises:
        NotPSD: if gamma has an eigenvalue below -tol.
    """
    g = sym_matrix(gamma)
    if g.shape != (d, d):
        raise DimensionMismatch(f"Gamma must be {d}x{d}, got {g.shape}", expected=(d, d), got=g.shape)
    min_eig = float(np.linalg.eigvalsh(g)[0])
    if min_eig < -default_psd_tol(g):
        raise NotPSD(f"Gamma is not positive semidefinite (min eigenvalue {min_eig:.3g})", min_eigenvalue=min_eig)
    chol = _try_factor(g)
    if chol is None:
        logger.debug("Gamma is singular; factor deferred until V_t + Gamma is positive definite")
    return MartingaleState(
        d=d,
        t=0,
        s=_frozen(np.zeros(d)),
        gram=_frozen(np.zeros((d, d))),
        regularizer=g,
        gram_chol=chol,
        regularizer_logdet=None if chol is None else chol.logdet,
        log=() if keep_log else None,
    )


def observe(state: MartingaleState, x: ArrayLike, w: float) -> MartingaleState:
    """Return the state after one more observation (x, w)."""
    x = np.array(as_vector(x, state.d))
    w = float(w)
    s = state.s + w * x
    gram = state.gram + np.outer(x, x)
    since = state.updates_since_refresh + 1
    if state.gram_chol is None:
        chol = _try_factor(gram + state.regularizer)
        since = 0
    elif since >= REFRESH_INTERVAL:
        logger.debug(f"Refreshing Cholesky factor at t={state.t + 1}")
        chol = cholesky(gram + state.regularizer)
        since = 0
    else:
        chol = rank_one_update(state.gram_chol, x)
    log = None if state.log is None else state.log + ((_frozen(x), w),)
    return replace(
        state,
        t=state.t + 1,
        s=_frozen(s),
        gram=_frozen(gram),
        gram_chol=chol,
        updates_since_refresh=since,
        log=log,
    )


def observe_many(state: MartingaleState, xs: ArrayLike, ws: ArrayLike) -> MartingaleState:
    """Absorb a block of observations with one refactorization."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, state.d)
    ws = np.asarray(ws, dtype=np.float64).reshape(-1)
    if xs.shape[0] != ws.shape[0]:
        raise DimensionMismatch("xs and ws disagree on the number of steps", expected=xs.shape[0], got=ws.shape[0])
    if xs.shape[0] == 0:
        return state
    s = state.s + ws @ xs
    gram = state.gram + xs.T @ xs
    log = None
    if state.log is not None:
        log = state.log + tuple((_frozen(np.array(x)), float(w)) for x, w in zip(xs, ws))
    return replace(
        state,
        t=state.t + xs.shape[0],
        s=_frozen(s),
        gram=_frozen(gram),
        gram_chol=_try_factor(gram + state.regularizer),
        updates_since_refresh=0,
        log=log,
    )


def rebase(state: MartingaleState, gamma: ArrayLike) -> MartingaleState:
    """Rebuild ``state`` for a different Gamma from its replay log."""
    if state.log is None:
        raise ValueError("State was created without keep_log=True; cannot rebase")
    rebuilt = new_state(state.d, gamma, keep_log=True)
    for x, w in state.log:
        rebuilt = observe(rebuilt, x, w)
    return rebuilt


def self_norm_sq(state: MartingaleState) -> float:
    """||S_t||^2_{(V_t + Gamma)^{-1}}."""
    return quad_form_inv(state._chol(), state.s)


def cross_norm_sq(state: MartingaleState, m: ArrayLike) -> float:
    """||S_t||^2_{(V_t+Gamma)^{-1} M (V_t+Gamma)^{-1}}."""
    y = solve(state._chol(), state.s)
    return max(float(y @ np.asarray(m, dtype=np.float64) @ y), 0.0)


def logdet_gain(state: MartingaleState) -> float:
    """log det(V_t + Gamma) - log det(Gamma)."""
    if state.regularizer_logdet is None:
        raise SingularGram("log-det gain is undefined for a singular Gamma")
    return state.gram_logdet - state.regularizer_logdet


@dataclass(frozen=True)
class StoppingRule:
    """Adapted stopping rule: fires on the current state or at the horizon.

    ``logdet_threshold`` is the built-in "log-det gain >= c" rule, which
    batch simulation can evaluate without stepping; ``predicate`` is any
    other state predicate.
    """

    horizon: int
    predicate: Callable[[MartingaleState], bool] | None = None
    logdet_threshold: float | None = None
    name: str = "horizon"

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")

    @property
    def vectorizable(self) -> bool:
        return self.predicate is None

    def fires(self, state: MartingaleState) -> bool:
        if state.t >= self.horizon:
            return True
        if self.logdet_threshold is not None and state.regularizer_logdet is not None:
            if logdet_gain(state) >= self.logdet_threshold:
                return True
        if self.predicate is not None:
            return bool(self.predicate(state))
        return False


def fixed_horizon(horizon: int) -> StoppingRule:
    return StoppingRule(horizon=horizon)


def logdet_gain_at_least(threshold: float, horizon: int) -> StoppingRule:
    return StoppingRule(horizon=horizon, logdet_threshold=threshold, name=f"logdet>={threshold:g}")


def self_norm_at_least(threshold: float, horizon: int) -> StoppingRule:
    def _reached(state: MartingaleState) -> bool:
        return state.is_definite and self_norm_sq(state) >= threshold

    return StoppingRule(horizon=horizon, predicate=_reached, name=f"self_norm>={threshold:g}")


def run_until(
    source: Iterable[tuple[ArrayLike, float]],
    rule: StoppingRule,
    gamma: ArrayLike,
    *,
    keep_log: bool = False,
) -> MartingaleState:
    """Feed ``source`` until ``rule`` fires, the horizon is hit or the stream ends."""
    g = sym_matrix(gamma)
    state = new_state(g.shape[0], g, keep_log=keep_log)
    observations = iter(source)
    while not rule.fires(state):
        try:
            x, w = next(observations)
        except StopIteration:
            logger.debug(f"Observation stream exhausted at t={state.t}")
            break
        state = observe(state, x, w)
    return state


def stop_index(xs: ArrayLike, rule: StoppingRule, gamma: ArrayLike) -> int:
    """Number of observations a vectorizable ``rule`` consumes from ``xs``."""
    if not rule.vectorizable:
        raise ValueError(f"Rule '{rule.name}' has a custom predicate; step it with run_until")
    xs = np.asarray(xs, dtype=np.float64)
    horizon = min(rule.horizon, xs.shape[0])
    if rule.logdet_threshold is None or horizon == 0:
        return horizon
    g = sym_matrix(gamma)
    sign0, base = np.linalg.slogdet(g)
    if sign0 <= 0:
        raise SingularGram("log-det stopping rule needs a positive definite Gamma")
    if rule.logdet_threshold <= 0.0:
        return 0
    head = xs[:horizon]
    cumulative = np.cumsum(head[:, :, None] * head[:, None, :], axis=0) + g
    _, logdets = np.linalg.slogdet(cumulative)
    hits = np.flatnonzero(logdets - base >= rule.logdet_threshold)
    return int(hits[0]) + 1 if hits.size else horizon


def write_observation_log(path: Path, xs: ArrayLike, ws: ArrayLike) -> None:
    """Write ``t, x0..x{d-1}, w`` rows with round-trip precision."""
    xs = np.asarray(xs, dtype=np.float64)
    ws = np.asarray(ws, dtype=np.float64).reshape(-1)
    d = xs.shape[1]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["t", *[f"x{i}" for i in range(d)], "w"])
        for t, (x, w) in enumerate(zip(xs, ws), start=1):
            writer.writerow([t, *[format(v, f".{LOG_DIGITS}g") for v in x], format(w, f".{LOG_DIGITS}g")])


def read_observation_log(path: Path) -> tuple[Array, Array]:
    """Parse an observation log into ``(xs, ws)``.

    Raises:
        ConfigError: naming the offending row on malformed input.
    """
    with path.open("r", newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ConfigError(f"Observation log {path} is empty (header missing)", field_path="log:header")
    header = [cell.strip() for cell in rows[0]]
    d = len(header) - 2
    expected = ["t", *[f"x{i}" for i in range(d)], "w"]
    if d < 1 or header != expected:
        raise ConfigError(f"Observation log header must be {','.join(expected)}", field_path="log:header")
    xs = np.zeros((len(rows) - 1, d))
    ws = np.zeros(len(rows) - 1)
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != d + 2:
            raise ConfigError(f"Row {i} has {len(row)} fields, expected {d + 2}", field_path=f"log:row {i}")
        try:
            t = int(row[0])
            values = [float(cell) for cell in row[1:]]
        except ValueError as exc:
            raise ConfigError(f"Row {i} is not numeric: {exc}", field_path=f"log:row {i}") from exc
        if t != i:
            raise ConfigError(f"Row {i} has t={t}, expected {i}", field_path=f"log:row {i}")
        xs[i - 1] = values[:d]
        ws[i - 1] = values[d]
    return xs, ws
