"""Crowd-sourced risk ranking in two stages.

1. :func:`aggregate_em` turns noisy binary annotations into per-app posterior
   probabilities with a one-coin Dawid-Skene model (one symmetric accuracy
   ``theta_m`` per annotator, Beta(2, 2) prior on each ``theta_m``, uniform
   prior on the latent label).  Each annotation aspect is aggregated
   separately and becomes one column of the latent label matrix ``Y``.
2. :func:`fit_rank` learns weights ``w`` over those columns from pairwise
   "i is riskier than j" constraints by minimizing

       lam * ||w||^2 + C * ||e - B Y w||^2,

   where each row of ``B`` holds +1 for the riskier app and -1 for the other.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import InputError
from .ingest import AnnotationSet, PairList
from .multiview_risk import rank_by_score
from .rng import stream

log = logging.getLogger(__name__)

THETA_MIN, THETA_MAX = 0.01, 0.99
PRIOR_A = PRIOR_B = 2.0


@dataclass(frozen=True)
class CrowdPosterior:
    """Output of :func:`aggregate_em`.

    ``Y`` is (apps x aspects) of posterior P(label = 1); ``theta`` is
    (aspects x annotators), NaN where an annotator never labeled that aspect.
    """

    app_ids: tuple[str, ...]
    annotator_ids: tuple[str, ...]
    aspect_ids: tuple[str, ...]
    Y: np.ndarray
    theta: np.ndarray
    trace: tuple[tuple[float, ...], ...]
    loglik: tuple[tuple[float, ...], ...]
    converged: tuple[bool, ...]
    excluded_annotators: tuple[str, ...] = ()


def _log_prior(theta):
    # log Beta(2,2) density: log 6 + log theta + log(1 - theta)
    return float(np.sum(np.log(6.0) + (PRIOR_A - 1) * np.log(theta) + (PRIOR_B - 1) * np.log1p(-theta)))


def _e_step(app, ann, lab, theta, n_apps):
    """Posterior P(z_a = 1) and the marginal log-likelihood."""
    lt, l1t = np.log(theta), np.log1p(-theta)
    # log-likelihood of each app's votes under z = 1 and z = 0
    ll1 = np.bincount(app, weights=np.where(lab == 1, lt[ann], l1t[ann]), minlength=n_apps)
    ll0 = np.bincount(app, weights=np.where(lab == 0, lt[ann], l1t[ann]), minlength=n_apps)
    m = np.maximum(ll1, ll0)
    lse = m + np.log(np.exp(ll1 - m) + np.exp(ll0 - m))
    q = np.exp(ll1 - lse)
    return q, float(np.sum(lse + np.log(0.5)))


def _m_step(app, ann, lab, q, n_ann):
    agree = np.where(lab == 1, q[app], 1.0 - q[app])
    hits = np.bincount(ann, weights=agree, minlength=n_ann)
    total = np.bincount(ann, minlength=n_ann).astype(np.float64)
    theta = (hits + PRIOR_A - 1.0) / (total + PRIOR_A + PRIOR_B - 2.0)
    return np.clip(theta, THETA_MIN, THETA_MAX)


def aggregate_em(annotations: AnnotationSet, max_iter: int = 200, tol: float = 1e-8,
                 seed: int | None = None, *, init: str = "vote") -> CrowdPosterior:
    """One-coin Dawid-Skene EM, run per aspect.

    ``init="vote"`` starts from the fraction of positive votes per app;
    ``init="random"`` draws the starting posteriors from ``seed``.  The
    recorded trace is the log posterior (marginal log-likelihood plus the
    Beta prior), which EM never decreases; ``loglik`` holds the likelihood
    part alone.
    """
    A = len(annotations.app_ids)
    M = len(annotations.annotator_ids)
    S = len(annotations.aspect_ids)
    Y = np.zeros((A, S))
    theta_out = np.full((S, M), np.nan)
    traces, lls, conv = [], [], []
    rng = stream(seed, "crowd_rank.em")
    counts = np.bincount(annotations.annotator, minlength=M)
    excluded = tuple(annotations.annotator_ids[m] for m in np.flatnonzero(counts == 0))
    if excluded:
        log.warning("annotators without annotations excluded: %s", ", ".join(excluded))
    for s in range(S):
        sel = annotations.aspect == s
        app = annotations.app[sel]
        ann_raw = annotations.annotator[sel]
        lab = annotations.label[sel].astype(np.int64)
        active = np.unique(ann_raw)
        remap = np.full(M, -1, dtype=np.int64)
        remap[active] = np.arange(len(active))
        ann = remap[ann_raw]
        if init == "random":
            q = rng.uniform(0.0, 1.0, size=A)
        elif init == "vote":
            q = np.bincount(app, weights=lab, minlength=A) / np.bincount(app, minlength=A)
        else:
            raise InputError(f"unknown init {init!r}")
        theta = _m_step(app, ann, lab, q, len(active))
        trace, ll_trace = [], []
        done = False
        for _ in range(max_iter):
            q, ll = _e_step(app, ann, lab, theta, A)
            obj = ll + _log_prior(theta)
            trace.append(obj)
            ll_trace.append(ll)
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-2])):
                done = True
                break
            theta = _m_step(app, ann, lab, q, len(active))
        if not done:
            log.warning("EM for aspect %r did not converge in %d iterations",
                        annotations.aspect_ids[s], max_iter)
        Y[:, s] = q
        theta_out[s, active] = theta
        traces.append(tuple(trace))
        lls.append(tuple(ll_trace))
        conv.append(done)
    return CrowdPosterior(annotations.app_ids, annotations.annotator_ids, annotations.aspect_ids,
                          Y, theta_out, tuple(traces), tuple(lls), tuple(conv), excluded)


def majority_vote(annotations: AnnotationSet, aspect: int = 0) -> np.ndarray:
    """Per-app majority label (ties -> 1) for one aspect; baseline for EM."""
    sel = annotations.aspect == aspect
    A = len(annotations.app_ids)
    pos = np.bincount(annotations.app[sel], weights=annotations.label[sel], minlength=A)
    tot = np.bincount(annotations.app[sel], minlength=A)
    return (2 * pos >= tot).astype(np.int64)


def pair_matrix(pairs: PairList | np.ndarray, app_ids=None, n_apps: int | None = None):
    """Sparse constraint matrix ``B`` (one row per pair: +1 better, -1 worse).

    ``pairs`` is either a :class:`PairList` of app ids (``app_ids`` gives
    their dense order) or an integer array of shape (P, 2).
    """
    if isinstance(pairs, PairList):
        if app_ids is None:
            raise InputError("app_ids is required to index a PairList")
        pos = {a: i for i, a in enumerate(app_ids)}
        try:
            idx = np.array([[pos[b], pos[w]] for b, w in zip(pairs.better, pairs.worse)],
                           dtype=np.int64).reshape(-1, 2)
        except KeyError as exc:
            raise InputError(f"pair refers to unknown app {exc.args[0]!r}") from None
        n_apps = len(app_ids)
    else:
        idx = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if n_apps is None:
            n_apps = int(idx.max()) + 1 if idx.size else 0
    if len(idx) == 0:
        raise InputError("empty pair set")
    if np.any(idx[:, 0] == idx[:, 1]):
        raise InputError("a pair compares an app with itself")
    P = len(idx)
    rows = np.repeat(np.arange(P), 2)
    cols = idx.reshape(-1)
    vals = np.tile([1.0, -1.0], P)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(P, n_apps))


@dataclass(frozen=True)
class RankFit:
    w: np.ndarray
    scores: np.ndarray
    objective: float
    iterations: int


def rank_objective(w, Y, B, lam, C) -> float:
    resid = 1.0 - B @ (Y @ w)
    return float(lam * (w @ w) + C * (resid @ resid))


def fit_rank(Y: np.ndarray, pairs, lam: float, C: float, tol: float = 1e-12,
             max_iter: int | None = None, *, w0: np.ndarray | None = None) -> RankFit:
    """Minimize ``lam ||w||^2 + C ||e - B Y w||^2`` by CG on the normal equations.

    ``pairs`` is a sparse/dense ``B`` or an integer (P, 2) array of
    (better, worse) app indices.
    """
    if lam <= 0 or C <= 0:
        raise InputError("lambda and C must be positive")
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if sparse.issparse(pairs):
        B = pairs
    elif isinstance(pairs, np.ndarray) and pairs.dtype.kind == "f":
        B = pairs
    else:
        B = pair_matrix(pairs, n_apps=Y.shape[0])
    if B.shape[0] == 0:
        raise InputError("empty pair set")
    if B.shape[1] != Y.shape[0]:
        raise InputError(f"B has {B.shape[1]} columns but Y has {Y.shape[0]} apps")
    D = np.asarray(B @ Y)  # P x L: per-pair feature differences
    e = np.ones(D.shape[0])
    L = D.shape[1]

    A = splinalg.LinearOperator((L, L), matvec=lambda v: lam * v + C * (D.T @ (D @ v)),
                                dtype=np.float64)
    its = [0]

    def count(_):
        its[0] += 1

    w, _ = splinalg.cg(A, C * (D.T @ e), x0=w0, rtol=tol, atol=0.0,
                       maxiter=max_iter if max_iter is not None else 10 * L + 10, callback=count)
    return RankFit(w, Y @ w, rank_objective(w, Y, B, lam, C), its[0])


def risk_scores(posterior: CrowdPosterior | np.ndarray, w: np.ndarray,
                app_ids=None) -> list[tuple[str, float]]:
    """Apps sorted by descending ``Y w``; ties keep ascending app index."""
    if isinstance(posterior, CrowdPosterior):
        Y, app_ids = posterior.Y, posterior.app_ids
    else:
        Y = np.atleast_2d(np.asarray(posterior, dtype=np.float64))
        if app_ids is None:
            app_ids = tuple(str(i) for i in range(Y.shape[0]))
    s = Y @ np.asarray(w, dtype=np.float64)
    return [(app_ids[i], float(s[i])) for i in rank_by_score(s)]

