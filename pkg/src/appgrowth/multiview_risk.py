"""Multi-view sparse multinomial risk model.

Softmax cross-entropy over K classes with two structured penalties on every
class column ``w_k`` split into view blocks ``w_k^v``:

* group term ``alpha * sum_k sum_v ||w_k^v||_2`` lets whole views compete
  (a block is switched off entirely), and
* exclusive term ``beta * sum_k sum_v ||w_k^v||_1 ** 2`` makes features
  inside a view compete with each other.

The fit is iteratively reweighted: each non-smooth norm is replaced by the
quadratic that touches it at the current iterate,

    ||w||_2     <=  ||w||_2^2 / (2 ||w_t||_2)           (+ const)
    ||w||_1^2   <=  sum_j ||w_t||_1 / |w_tj| * w_j^2

and the resulting smooth problem is decreased by proximal gradient steps with
backtracking (the quadratic penalty has a closed-form prox, which keeps the
steps stable when some reweighting factors become very large).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._format import dumps
from .errors import ComputationError, InputError
from .ingest import MultiViewDataset

log = logging.getLogger(__name__)

EPS = 1e-8
ARMIJO_C = 1e-4
DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 500
DEFAULT_RISK_CLASS = "risky"


def _logsumexp_rows(Z: np.ndarray) -> np.ndarray:
    m = Z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(Z - m).sum(axis=1, keepdims=True)))[:, 0]


def _check(W, data: MultiViewDataset):
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (data.p, data.K):
        raise InputError(f"W has shape {W.shape}, expected ({data.p}, {data.K})")
    return W


def smooth_loss(W: np.ndarray, X: np.ndarray, Y: np.ndarray) -> float:
    """Softmax cross-entropy summed over samples (no penalties)."""
    Z = X @ W
    return float(np.sum(Y.sum(axis=1) * _logsumexp_rows(Z)) - np.sum(Y * Z))


def smooth_grad(W: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    Z = X @ W
    P = np.exp(Z - _logsumexp_rows(Z)[:, None])
    return X.T @ (P * Y.sum(axis=1, keepdims=True) - Y)


def block_norms(W: np.ndarray, views: dict) -> dict[str, np.ndarray]:
    """Per-view L2 norms, one entry per class: ``{view: array(K)}``."""
    return {v: np.sqrt(np.sum(W[idx] ** 2, axis=0)) for v, idx in views.items()}


def penalty(W: np.ndarray, views: dict, alpha: float, beta: float) -> float:
    total = 0.0
    for idx in views.values():
        block = W[idx]
        total += alpha * float(np.sum(np.sqrt(np.sum(block ** 2, axis=0))))
        total += beta * float(np.sum(np.sum(np.abs(block), axis=0) ** 2))
    return total


def objective(W, data: MultiViewDataset, alpha: float, beta: float) -> float:
    """Penalized training objective at ``W`` (p x K)."""
    W = _check(W, data)
    return smooth_loss(W, data.X, data.Y) + penalty(W, data.views, alpha, beta)


@dataclass(frozen=True)
class RiskModel:
    W: np.ndarray
    alpha: float
    beta: float
    views: dict
    feature_names: tuple[str, ...]
    classes: tuple[str, ...]
    risk_class: str = DEFAULT_RISK_CLASS
    trace: tuple[float, ...] = ()
    iterations: int = 0
    converged: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": "multiview-risk",
            "W": self.W.tolist(),
            "alpha": self.alpha,
            "beta": self.beta,
            "views": {v: [self.feature_names[j] for j in idx] for v, idx in self.views.items()},
            "feature_names": list(self.feature_names),
            "classes": list(self.classes),
            "risk_class": self.risk_class,
            "objective_trace": list(self.trace),
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "RiskModel":
        pos = {f: j for j, f in enumerate(d["feature_names"])}
        views = {v: np.array([pos[f] for f in fs], dtype=np.int64) for v, fs in d["views"].items()}
        return cls(np.array(d["W"], dtype=np.float64), d["alpha"], d["beta"], views,
                   tuple(d["feature_names"]), tuple(d["classes"]), d.get("risk_class", DEFAULT_RISK_CLASS),
                   tuple(d.get("objective_trace", ())), d.get("iterations", 0),
                   d.get("converged", False))

    @classmethod
    def load(cls, path) -> "RiskModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _reweighting(W, views, alpha, beta, reference=None):
    """Diagonal quadratic weights ``Q`` so the surrogate penalty is ``sum(Q * W**2)``.

    ``reference`` replaces the block norms by a fixed value (used for the
    warm start, where W = 0 would make every group weight infinite).
    """
    Q = np.zeros_like(W)
    for idx in views.values():
        block = W[idx]
        if alpha > 0:
            l2 = np.sqrt(np.sum(block ** 2, axis=0)) if reference is None else np.full(W.shape[1], reference)
            Q[idx] += alpha / (2.0 * l2 + EPS)
        if beta > 0:
            if reference is None:
                l1 = np.sum(np.abs(block), axis=0)
                Q[idx] += beta * l1 / (np.abs(block) + EPS)
            else:
                Q[idx] += beta * len(idx)
    return Q


def _surrogate_solve(W, X, Y, Q, step, max_inner, tol):
    """Decrease ``smooth(W) + sum(Q * W**2)`` by proximal-gradient steps.

    Sufficient decrease: F(W+) <= F(W) - c / step * ||W+ - W||^2, step halved
    until it holds, then allowed to grow by 2 for the next trial.
    """
    f = smooth_loss(W, X, Y)
    F = f + float(np.sum(Q * W * W))
    for _ in range(max_inner):
        g = smooth_grad(W, X, Y)
        scale = 1.0 + float(np.sqrt(np.sum(W * W)))
        while True:
            W_new = (W - step * g) / (1.0 + 2.0 * step * Q)
            d2 = float(np.sum((W_new - W) ** 2))
            if d2 <= (1e-15 * scale) ** 2:
                # rounding-level move: the surrogate is minimized
                return W, step
            F_new = smooth_loss(W_new, X, Y) + float(np.sum(Q * W_new * W_new))
            if F_new <= F - ARMIJO_C / step * d2:
                break
            step *= 0.5
        if not np.isfinite(F_new):
            raise ComputationError("non-finite surrogate objective; check feature scaling")
        grad_map = np.sqrt(d2) / step
        W, F = W_new, F_new
        step *= 2.0
        if grad_map <= tol * (1.0 + abs(F)):
            break
    return W, step


def fit_irls(data: MultiViewDataset, alpha: float, beta: float, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER, seed: int | None = None, *,
             risk_class: str = DEFAULT_RISK_CLASS, max_inner: int = 200,
             inner_tol: float = 1e-10) -> RiskModel:
    """Fit the penalized model by iterative reweighting, starting from W = 0.

    With any penalty active, W = 0 is a fixed point of plain reweighting, so
    the first surrogate uses unit reference block norms; that warm start is
    accepted only along a backtracked segment from 0 that lowers the true
    objective.  Every outer step is likewise safeguarded, so the recorded
    objective trace never increases.

    ``seed`` is accepted for interface symmetry; the solver is deterministic.
    """
    if alpha < 0 or beta < 0:
        raise InputError("alpha and beta must be nonnegative")
    if tol <= 0:
        raise InputError("tol must be positive")
    X, Y, views = data.X, data.Y, data.views
    W = np.zeros((data.p, data.K))
    obj = objective(W, data, alpha, beta)
    trace = [obj]
    step = 1.0

    def true_obj(V):
        return smooth_loss(V, X, Y) + penalty(V, views, alpha, beta)

    def safeguarded(W_old, f_old, W_new):
        t = 1.0
        while t > 1e-12:
            V = W_old + t * (W_new - W_old)
            fv = true_obj(V)
            if not np.isfinite(fv):
                raise ComputationError("non-finite objective during IRLS")
            if fv <= f_old:
                return V, fv
            t *= 0.5
        return W_old, f_old

    if alpha > 0 or beta > 0:
        Q0 = _reweighting(W, views, alpha, beta, reference=1.0)
        W_warm, step = _surrogate_solve(W, X, Y, Q0, step, max_inner, inner_tol)
        W, obj = safeguarded(W, obj, W_warm)
        trace.append(obj)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Q = _reweighting(W, views, alpha, beta)
        W_cand, step = _surrogate_solve(W, X, Y, Q, step, max_inner, inner_tol)
        W_next, obj_next = safeguarded(W, obj, W_cand)
        change = abs(obj - obj_next) / max(abs(obj), 1e-300)
        W, obj = W_next, obj_next
        trace.append(obj)
        if change < tol or obj == 0.0:
            converged = True
            break
    if not converged:
        log.warning("fit_irls reached max_iter=%d without meeting tol=%g", max_iter, tol)
    return RiskModel(W, float(alpha), float(beta), dict(views), data.feature_names,
                     data.classes, risk_class, tuple(trace), it, converged,
                     {"max_iter_reached": not converged})


def predict_proba(model: RiskModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.W.shape[0]:
        raise InputError(f"feature dimension {X.shape[-1]} does not match model ({model.W.shape[0]})")
    Z = X @ model.W
    return np.exp(Z - _logsumexp_rows(Z)[:, None])


@dataclass(frozen=True)
class RiskRanking:
    probabilities: np.ndarray
    scores: np.ndarray
    order: np.ndarray
    rank: np.ndarray


def rank_by_score(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score; equal scores keep ascending index order."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def predict_and_rank(model: RiskModel, data: MultiViewDataset | np.ndarray,
                     risk_class: str | None = None) -> RiskRanking:
    """Class probabilities and the descending risk ranking of every sample."""
    risk_class = model.risk_class if risk_class is None else risk_class
    if risk_class not in model.classes:
        raise InputError(f"risk class {risk_class!r} is not one of {list(model.classes)}")
    X = data.X if isinstance(data, MultiViewDataset) else data
    if isinstance(data, MultiViewDataset) and tuple(data.feature_names) != tuple(model.feature_names):
        raise InputError("dataset features do not match the model's features")
    P = predict_proba(model, X)
    scores = P[:, model.classes.index(risk_class)]
    order = rank_by_score(scores)
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(1, len(order) + 1)
    return RiskRanking(P, scores, order, rank)


def view_importance(model: RiskModel) -> dict[str, float]:
    """Sum over classes of each view's block norm; zero for pruned views."""
    return {v: float(n.sum()) for v, n in block_norms(model.W, model.views).items()}
