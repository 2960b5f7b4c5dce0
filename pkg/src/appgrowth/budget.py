"""Saturating spend-response curves and budget allocation across channels.

Each channel acquires ``users(s) = cap * (1 - exp(-rate * s))`` users for
spend ``s``: zero at zero spend, increasing, concave, with ceiling ``cap``.
A channel's market capacity bounds the users it can deliver.  The allocator
hands out the budget in small equal increments, each to the channel with the
largest marginal users per unit of money.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import _kernels
from .errors import InputError

DEFAULT_STEPS = 10_000
NO_SATURATION_FACTOR = 10.0


@dataclass(frozen=True)
class ResponseCurve:
    cap: float
    rate: float
    residual_ss: float = 0.0
    saturation_observed: bool = True

    def __post_init__(self):
        if not (self.cap > 0 and self.rate > 0):
            raise InputError("response curve needs cap > 0 and rate > 0")

    def users(self, spend):
        return self.cap * -np.expm1(-self.rate * np.asarray(spend, dtype=np.float64))

    def marginal(self, spend):
        return self.cap * self.rate * np.exp(-self.rate * np.asarray(spend, dtype=np.float64))


def _profile(spend, users, rate):
    """Best cap for a fixed rate (linear least squares) and its residual SS."""
    g = -np.expm1(-rate * spend)
    gg = float(g @ g)
    cap = float(g @ users) / gg if gg > 0 else 0.0
    r = users - cap * g
    return cap, float(r @ r)


def fit_response_curve(spend, users, *, grid_size: int = 200) -> ResponseCurve:
    """Least-squares fit of ``cap * (1 - exp(-rate * s))``.

    ``cap`` is eliminated in closed form for each ``rate``.  The remaining
    one-dimensional problem in ``log(rate)`` is scanned on a grid and then
    polished by a bounded scalar minimization around the best grid point.
    Rates are confined to ``[1e-3, 1e3] / max(spend)``; a fit whose ceiling
    exceeds ten times the largest observed user count is flagged as showing
    no saturation.
    """
    s = np.asarray(spend, dtype=np.float64)
    u = np.asarray(users, dtype=np.float64)
    if s.shape != u.shape or s.ndim != 1:
        raise InputError("spend and users must be 1-d and of equal length")
    if len(np.unique(s)) < 3:
        raise InputError("need at least three distinct spend levels")
    if np.any(s < 0) or np.any(u < 0):
        raise InputError("spend and users must be nonnegative")
    if np.ptp(u) == 0:
        raise InputError("degenerate data: every observed user count is equal")
    smax = float(s.max())
    grid = np.linspace(np.log(1e-3 / smax), np.log(1e3 / smax), grid_size)

    def sse(z):
        return _profile(s, u, np.exp(z))[1]

    vals = np.array([sse(z) for z in grid])
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]
    res = optimize.minimize_scalar(sse, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    z = float(res.x) if res.fun <= vals[i] else float(grid[i])
    cap, sse_best = _profile(s, u, np.exp(z))
    if cap <= 0:
        raise InputError("users do not increase with spend; no saturating fit exists")
    return ResponseCurve(cap, float(np.exp(z)), sse_best,
                         saturation_observed=cap <= NO_SATURATION_FACTOR * float(u.max()))


@dataclass(frozen=True)
class Allocation:
    spend: np.ndarray
    users: np.ndarray
    total_users: float
    unspent: float

    def to_rows(self, names):
        return [(n, float(s), float(u)) for n, s, u in zip(names, self.spend, self.users)]


def projected_users(curves, spend, capacities) -> np.ndarray:
    """Users per channel, capped at each channel's market capacity."""
    return np.array([min(float(c.users(x)), float(m)) for c, x, m in zip(curves, spend, capacities)])


def allocate_budget(curves, total: float, capacities=None,
                    n_steps: int = DEFAULT_STEPS) -> Allocation:
    """Greedy marginal-return allocation of ``total`` in ``n_steps`` increments.

    Each increment goes to the channel whose capped user count rises most;
    channels at capacity stop receiving money.  If every channel is capped
    the rest of the budget is reported as unspent.
    """
    if total <= 0:
        raise InputError("total budget must be positive")
    curves = list(curves)
    if not curves:
        raise InputError("need at least one channel")
    if capacities is None:
        capacities = [np.inf] * len(curves)
    caps_m = np.asarray(capacities, dtype=np.float64)
    if caps_m.shape != (len(curves),) or np.any(caps_m < 0):
        raise InputError("one nonnegative capacity per channel is required")
    if np.all(caps_m == 0):
        raise InputError("all channel capacities are zero")
    cap = np.array([c.cap for c in curves], dtype=np.float64)
    rate = np.array([c.rate for c in curves], dtype=np.float64)
    steps, used = _kernels.greedy_allocate(cap, rate, caps_m, float(total), int(n_steps))
    delta = float(total) / n_steps
    spend = np.asarray(steps, dtype=np.float64) * delta
    users = projected_users(curves, spend, caps_m)
    return Allocation(spend, users, float(users.sum()), float(total) - used * delta)
