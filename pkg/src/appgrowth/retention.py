"""Cohort retention, hazard and survival curves, action/retention correlation.

Users are grouped by signup period.  Elapsed periods are measured from each
user's own signup timestamp; period ``i`` of a user is observed only when it
has fully elapsed by the observation end (period 0 is always observed and
always counts as active, since the signup itself happens in it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, UndefinedCorrelationError
from .ingest import EventLog

PERIODS = {"day": 86_400, "week": 7 * 86_400, "month": 30 * 86_400}


def period_seconds(period) -> int:
    """``"day"``/``"week"``/``"month"`` (30 days) or a positive number of seconds."""
    if isinstance(period, str):
        if period in PERIODS:
            return PERIODS[period]
        try:
            period = int(period)
        except ValueError:
            raise InputError(f"unknown period {period!r}") from None
    if period <= 0:
        raise InputError("period must be positive")
    return int(period)


@dataclass(frozen=True)
class CohortTable:
    """Per-cohort at-risk and active counts over elapsed periods ``0..horizon``.

    ``censored[c, i]`` is True when no user of cohort ``c`` has period ``i``
    fully observed; those cells carry no information (their counts are 0).
    """

    cohorts: np.ndarray
    cohort_start: np.ndarray
    at_risk: np.ndarray
    active: np.ndarray
    period: int
    horizon: int
    observation_end: int

    @property
    def censored(self) -> np.ndarray:
        return self.at_risk == 0

    def retention(self) -> np.ndarray:
        """active / at-risk per cell, NaN where censored."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.censored, np.nan, self.active / np.maximum(self.at_risk, 1))

    def hazards(self, pooled: bool = False) -> np.ndarray:
        """Estimated per-period hazard (at-risk - active) / at-risk.

        Per cohort, NaN where censored.  ``pooled=True`` sums counts across
        cohorts and truncates at the first fully censored period.
        """
        if pooled:
            r = self.at_risk.sum(axis=0)
            a = self.active.sum(axis=0)
            stop = np.flatnonzero(r == 0)
            k = int(stop[0]) if len(stop) else len(r)
            return (r[:k] - a[:k]) / r[:k]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.censored, np.nan,
                            (self.at_risk - self.active) / np.maximum(self.at_risk, 1))


def build_cohorts(events: EventLog, period, horizon: int,
                  observation_end: int | None = None, origin: int | None = None) -> CohortTable:
    """Group users by signup period and count activity per elapsed period.

    ``origin`` anchors the cohort grid (default: the earliest signup);
    ``observation_end`` defaults to the latest event timestamp.
    """
    period = period_seconds(period)
    if horizon < 0:
        raise InputError("horizon must be nonnegative")
    signup = events.signup_times()
    latest = int(events.timestamp.max())
    if observation_end is None:
        observation_end = latest
    elif observation_end < latest:
        raise InputError("observation end precedes the latest event")
    if origin is None:
        origin = int(signup.min())
    cohort_of_user = (signup - origin) // period
    cohorts, cidx = np.unique(cohort_of_user, return_inverse=True)
    C, P = len(cohorts), horizon + 1

    # last fully observed elapsed period per user (period 0 always observed)
    last_obs = np.maximum((observation_end - signup) // period - 1, 0)
    periods = np.arange(P)
    observed = periods[None, :] <= last_obs[:, None]  # users x periods

    active_user = np.zeros((events.n_users, P), dtype=bool)
    active_user[:, 0] = True
    is_act = np.array([k != "signup" for k in events.kind], dtype=bool)
    u = events.user[is_act]
    elapsed = (events.timestamp[is_act] - signup[u]) // period
    keep = elapsed <= horizon
    active_user[u[keep], elapsed[keep]] = True
    active_user &= observed

    at_risk = np.zeros((C, P), dtype=np.int64)
    active = np.zeros((C, P), dtype=np.int64)
    np.add.at(at_risk, cidx, observed.astype(np.int64))
    np.add.at(active, cidx, active_user.astype(np.int64))
    return CohortTable(cohorts, origin + cohorts * period, at_risk, active, period, horizon,
                       int(observation_end))


@dataclass(frozen=True)
class SurvivalCurves:
    hazard: np.ndarray
    retention: np.ndarray
    kaplan_meier: np.ndarray
    nelson_aalen: np.ndarray


def survival_curves(hazards) -> SurvivalCurves:
    """Retention, Kaplan-Meier and Nelson-Aalen curves from interval hazards.

    ``S_KM(t_i) = prod_{j<=i} (1 - h_j)`` and ``S_NA(t_i) = exp(-sum_{j<=i} h_j)``.
    """
    h = np.asarray(hazards, dtype=np.float64)
    if h.ndim != 1:
        raise InputError("hazards must be a 1-d series")
    if np.any(~np.isfinite(h)) or np.any(h < 0) or np.any(h > 1):
        raise InputError("every hazard must lie in [0, 1]")
    retention = 1.0 - h
    return SurvivalCurves(h, retention, np.cumprod(retention), np.exp(-np.cumsum(h)))


@dataclass(frozen=True)
class PearsonResult:
    r: float
    n: int
    correlation_not_causality: bool = True


def pearson_r(x, y) -> PearsonResult:
    """Sample Pearson correlation.  Correlation says nothing about causation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("x and y must be 1-d and of equal length")
    if len(x) < 2:
        raise InputError("need at least two observations")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined: an input has zero variance")
    r = float(dx @ dy) / (np.sqrt(sxx) * np.sqrt(syy))
    return PearsonResult(float(np.clip(r, -1.0, 1.0)), len(x))


def stickiness(events: EventLog, action: str, period, window: int = 1) -> np.ndarray:
    """Per-user count of ``action`` events in the first ``window`` elapsed periods."""
    period = period_seconds(period)
    signup = events.signup_times()
    name = action if action.startswith("action:") else f"action:{action}"
    mask = np.array([k == name for k in events.kind], dtype=bool)
    u = events.user[mask]
    elapsed = (events.timestamp[mask] - signup[u]) // period
    return np.bincount(u[elapsed < window], minlength=events.n_users).astype(np.float64)


def retained(events: EventLog, period, target: int,
             observation_end: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-user 0/1 activity in elapsed period ``target`` plus an observed mask."""
    period = period_seconds(period)
    signup = events.signup_times()
    end = int(events.timestamp.max()) if observation_end is None else observation_end
    observed = (end - signup) // period - 1 >= target
    mask = np.array([k != "signup" for k in events.kind], dtype=bool)
    u = events.user[mask]
    elapsed = (events.timestamp[mask] - signup[u]) // period
    out = np.zeros(events.n_users)
    out[u[elapsed == target]] = 1.0
    return out, observed


def action_correlations(events: EventLog, period, window: int = 1, target: int = 1,
                        observation_end: int | None = None) -> dict[str, PearsonResult | None]:
    """Pearson r between each action's early stickiness and later retention.

    ``None`` marks actions whose correlation is undefined (zero variance).
    """
    y, observed = retained(events, period, target, observation_end)
    actions = sorted({k[7:] for k in events.kind if k.startswith("action:")})
    out: dict[str, PearsonResult | None] = {}
    for a in actions:
        x = stickiness(events, a, period, window)
        try:
            out[a] = pearson_r(x[observed], y[observed])
        except InputError:
            out[a] = None
    return out
