"""Campaign effectiveness: propensity scores, covariate balance, ATE / ATT.

The propensity score ``e(x) = P(T = 1 | x)`` is modeled as ``link(h(x))``
with ``h`` a polynomial (degree 1 or 2, with cross terms) in standardized
covariates and ``link`` the normal CDF (probit) or the logistic function.
Treatment effects are then estimated by inverse probability weighting or by
stratifying on score quantiles.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ComputationError, InputError, PerfectSeparationError
from .ingest import StudyTable

CLIP = 0.01
DEFAULT_STRATA = 5
LINKS = ("probit", "logit")


# ---------------------------------------------------------------------------
# propensity model
# ---------------------------------------------------------------------------

def expand(Z: np.ndarray, degree: int) -> np.ndarray:
    """Intercept, linear terms and (for degree 2) all squares and cross terms."""
    if degree not in (1, 2):
        raise InputError("propensity polynomial degree must be 1 or 2")
    cols = [np.ones(len(Z)), *Z.T]
    if degree == 2:
        for i, j in itertools.combinations_with_replacement(range(Z.shape[1]), 2):
            cols.append(Z[:, i] * Z[:, j])
    return np.column_stack(cols)


def _loglik(beta, H, s, link):
    eta = H @ beta
    if link == "probit":
        return float(np.sum(special.log_ndtr(s * eta)))
    return float(np.sum(-np.logaddexp(0.0, -s * eta)))


def _score(beta, H, s, link):
    eta = H @ beta
    if link == "probit":
        # d/d eta log Phi(s eta) = s phi(eta) / Phi(s eta), in log space
        ratio = np.exp(-0.5 * eta ** 2 - 0.5 * np.log(2 * np.pi) - special.log_ndtr(s * eta))
        return H.T @ (s * ratio)
    return H.T @ (s * special.expit(-s * eta))


@dataclass(frozen=True)
class PropensityModel:
    link: str
    degree: int
    coef: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    clip: float = CLIP
    iterations: int = 0
    loglik: float = float("nan")

    def linear_predictor(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.center) / self.scale
        return expand(Z, self.degree) @ self.coef

    def scores(self, X) -> np.ndarray:
        eta = self.linear_predictor(X)
        p = special.ndtr(eta) if self.link == "probit" else special.expit(eta)
        return np.clip(p, self.clip, 1.0 - self.clip)


def fit_propensity(study: StudyTable, link: str = "probit", degree: int = 1,
                   seed: int | None = None, *, tol: float = 1e-9,
                   max_iter: int = 20_000) -> PropensityModel:
    """Maximum-likelihood propensity fit by gradient ascent with backtracking.

    Raises :class:`PerfectSeparationError` as soon as an iterate classifies
    every unit correctly: the data are then separable and the likelihood has
    no maximizer.  ``seed`` is accepted for interface symmetry (the ascent
    starts from zero and is deterministic).
    """
    if link not in LINKS:
        raise InputError(f"link must be one of {LINKS}")
    study.require_both_arms()
    X = study.X
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    H = expand((X - center) / scale, degree)
    s = 2.0 * study.treatment - 1.0
    n = len(s)
    beta = np.zeros(H.shape[1])
    # intercept-only start at the treated share
    rate = float(study.treatment.mean())
    beta[0] = special.ndtri(rate) if link == "probit" else special.logit(rate)
    f = _loglik(beta, H, s, link) / n
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        g = _score(beta, H, s, link) / n
        gg = float(g @ g)
        if np.sqrt(gg) < tol:
            break
        while True:
            cand = beta + step * g
            fc = _loglik(cand, H, s, link) / n
            if fc >= f + 1e-4 * step * gg:
                break
            step *= 0.5
            if step < 1e-20:
                raise ComputationError("propensity line search failed")
        if not np.isfinite(fc):
            raise ComputationError("non-finite propensity log-likelihood")
        beta, f_old, f = cand, f, fc
        step *= 2.0
        if np.all(s * (H @ beta) > 0):
            raise PerfectSeparationError(
                "treatment is perfectly predicted by the covariates (no finite MLE); "
                "trim the study to the region of common support")
        if abs(f - f_old) <= 1e-15 * max(1.0, abs(f)):
            break
    return PropensityModel(link, degree, beta, center, scale, CLIP, it, f * n)


def quantile_strata(scores, n_strata: int) -> tuple[np.ndarray, np.ndarray]:
    """Assign units to score-quantile strata; returns (stratum index, edges)."""
    if n_strata < 2:
        raise InputError("need at least two strata")
    scores = np.asarray(scores, dtype=np.float64)
    edges = np.quantile(scores, np.linspace(0.0, 1.0, n_strata + 1))
    idx = np.searchsorted(edges[1:-1], scores, side="right")
    return idx, edges


# ---------------------------------------------------------------------------
# balance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BalanceReport:
    covariates: tuple[str, ...]
    smd_raw: np.ndarray
    smd_adjusted: np.ndarray
    edges: np.ndarray
    usable: np.ndarray
    threshold: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariates),
            "smd_raw": self.smd_raw.tolist(),
            "smd_adjusted": self.smd_adjusted.tolist(),
            "strata_edges": self.edges.tolist(),
            "stratum_usable": self.usable.tolist(),
            "threshold": self.threshold,
            "pass": self.passed,
        }


def _pooled_sd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    va = a.var(axis=0, ddof=1) if len(a) > 1 else np.zeros(a.shape[1])
    vb = b.var(axis=0, ddof=1) if len(b) > 1 else np.zeros(b.shape[1])
    return np.sqrt((va + vb) / 2.0)


def check_balance(scores, study: StudyTable, n_strata: int = DEFAULT_STRATA,
                  threshold: float = 0.1) -> BalanceReport:
    """Standardized mean differences before and after score stratification.

    Raw SMD is |mean_T - mean_C| / pooled SD.  The adjusted SMD averages the
    within-stratum |mean_T - mean_C| (weighted by stratum size) and divides by
    the same raw pooled SD.  Strata missing either arm are marked unusable and
    left out of the average.
    """
    if n_strata < 2:
        raise InputError("need at least two strata")
    study.require_both_arms()
    X, t = study.X, study.treatment.astype(bool)
    sd = _pooled_sd(X[t], X[~t])
    sd_safe = np.where(sd > 0, sd, 1.0)
    raw = np.abs(X[t].mean(axis=0) - X[~t].mean(axis=0)) / sd_safe
    strata, edges = quantile_strata(scores, n_strata)
    usable = np.zeros(n_strata, dtype=bool)
    acc = np.zeros(X.shape[1])
    weight = 0
    for k in range(n_strata):
        m = strata == k
        tk, ck = m & t, m & ~t
        if not tk.any() or not ck.any():
            continue
        usable[k] = True
        acc += m.sum() * np.abs(X[tk].mean(axis=0) - X[ck].mean(axis=0))
        weight += int(m.sum())
    adjusted = acc / weight / sd_safe if weight else np.full(X.shape[1], np.nan)
    passed = bool(weight) and bool(np.all(adjusted < threshold))
    return BalanceReport(study.covariates, raw, adjusted, edges, usable, threshold, passed)


# ---------------------------------------------------------------------------
# effects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EffectEstimate:
    ate: float
    att: float
    estimator: str
    strata: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ate": self.ate, "att": self.att, "estimator": self.estimator,
                "strata": self.strata}


def difference_in_means(study: StudyTable) -> float:
    t = study.treatment.astype(bool)
    return float(study.outcome[t].mean() - study.outcome[~t].mean())


def estimate_effects(study: StudyTable, scores, estimator: str = "ipw",
                     n_strata: int = DEFAULT_STRATA) -> EffectEstimate:
    """ATE and ATT from propensity scores.

    ``ipw``: ATE = mean(T Y / e) - mean((1 - T) Y / (1 - e)); ATT compares
    the treated mean with the control mean reweighted by e / (1 - e).
    ``stratified``: within-stratum mean differences on score quantiles,
    combined with stratum-size (ATE) or treated-count (ATT) weights.
    """
    study.require_both_arms()
    e = np.asarray(scores, dtype=np.float64)
    if e.shape != study.outcome.shape:
        raise InputError("one score per unit is required")
    if np.any(~np.isfinite(e)) or np.any(e <= 0) or np.any(e >= 1):
        raise InputError("propensity scores must lie strictly inside (0, 1)")
    y = study.outcome
    t = study.treatment.astype(np.float64)
    tb = t.astype(bool)
    if estimator == "ipw":
        ate = float(np.mean(t * y / e) - np.mean((1.0 - t) * y / (1.0 - e)))
        w = e[~tb] / (1.0 - e[~tb])
        att = float(y[tb].mean() - np.sum(w * y[~tb]) / np.sum(w))
        return EffectEstimate(ate, att, "ipw")
    if estimator != "stratified":
        raise InputError("estimator must be 'ipw' or 'stratified'")
    strata, edges = quantile_strata(e, n_strata)
    rows = []
    for k in range(n_strata):
        m = strata == k
        tk, ck = m & tb, m & ~tb
        usable = bool(tk.any() and ck.any())
        rows.append({
            "stratum": k, "low": float(edges[k]), "high": float(edges[k + 1]),
            "n": int(m.sum()), "n_treated": int(tk.sum()), "usable": usable,
            "difference": float(y[tk].mean() - y[ck].mean()) if usable else None,
        })
    use = [r for r in rows if r["usable"]]
    if not use:
        raise ComputationError("no stratum contains both treated and control units")
    n_all = sum(r["n"] for r in use)
    nt_all = sum(r["n_treated"] for r in use)
    ate = float(sum(r["n"] / n_all * r["difference"] for r in use))
    att = float(sum(r["n_treated"] / nt_all * r["difference"] for r in use))
    return EffectEstimate(ate, att, "stratified", rows)


# the budget allocator over fitted response curves lives in its own module
from .budget import (Allocation, ResponseCurve, allocate_budget,  # noqa: E402,F401
                     fit_response_curve, projected_users)
