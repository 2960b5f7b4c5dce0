"""Poisson factorization recommenders with multiplicative updates.

Two rate models over observed cells only (unobserved cells are not zeros):

privacy-aware
    mu_ij = u_i . (v_j + lam * sum_{s in perms(j)} p_s)
context-aware (shared rank r)
    mu_ijk = U_i . V_j + U_i . P_k + V_j . P_k

Each factor block is updated with the KL/Poisson multiplicative rule.  The
other terms of the rate act as a fixed nonnegative offset, so every block
update is a majorize-minimize step: the log-likelihood never decreases and
factors stay nonnegative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from ._format import dumps
from .errors import ComputationError, InputError
from .ingest import ContextQuads, PrivacyProfile
from .multiview_risk import rank_by_score
from .rng import stream

RATE_FLOOR = 1e-10
_TINY = 1e-300
VARIANTS = ("plain", "privacy", "context")


@dataclass(frozen=True)
class FactorModel:
    """Fitted factors.  ``P`` holds permission factors (privacy variant),
    context factors (context variant) or is empty (plain)."""

    variant: str
    U: np.ndarray
    V: np.ndarray
    P: np.ndarray
    lam: float = 0.0
    perm_sets: tuple[tuple[int, ...], ...] = ()
    user_ids: tuple[str, ...] = ()
    item_ids: tuple[str, ...] = ()
    context_ids: tuple[str, ...] = ()
    permission_ids: tuple[str, ...] = ()
    trace: tuple[float, ...] = ()
    seen: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def item_term(self) -> np.ndarray:
        """v_j + lam * sum of permission factors, one row per item."""
        if self.variant != "privacy" or self.lam == 0.0:
            return self.V
        return self.V + self.lam * _perm_sums(self.P, self.perm_sets, self.V.shape[0])

    def to_dict(self) -> dict:
        return {
            "kind": "poisson-factorization",
            "variant": self.variant,
            "rank": self.rank,
            "lambda": self.lam,
            "U": self.U.tolist(),
            "V": self.V.tolist(),
            "P": self.P.tolist(),
            "perm_sets": [list(s) for s in self.perm_sets],
            "user_ids": list(self.user_ids),
            "item_ids": list(self.item_ids),
            "context_ids": list(self.context_ids),
            "permission_ids": list(self.permission_ids),
            "loglik_trace": list(self.trace),
            "seen": {_seen_str(k): list(v) for k, v in self.seen.items()},
        }

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FactorModel":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        r = d["rank"]

        def mat(x):
            return np.array(x, dtype=np.float64).reshape(-1, r)

        seen = {_seen_key(k): tuple(v) for k, v in d.get("seen", {}).items()}
        return cls(d["variant"], mat(d["U"]), mat(d["V"]), mat(d["P"]), d["lambda"],
                   tuple(tuple(s) for s in d["perm_sets"]), tuple(d["user_ids"]),
                   tuple(d["item_ids"]), tuple(d["context_ids"]), tuple(d["permission_ids"]),
                   tuple(d["loglik_trace"]), seen)


def _seen_str(k) -> str:
    return ",".join(str(int(x)) for x in k) if isinstance(k, tuple) else str(int(k))


def _seen_key(k: str):
    parts = k.split(",")
    return int(parts[0]) if len(parts) == 1 else tuple(int(x) for x in parts)


def _perm_sums(P, perm_sets, m) -> np.ndarray:
    out = np.zeros((m, P.shape[1]))
    for j, ss in enumerate(perm_sets):
        if ss:
            out[j] = P[list(ss)].sum(axis=0)
    return out


def _perm_incidence(perm_sets, m, S):
    """Item x permission 0/1 matrix."""
    A = np.zeros((m, S))
    for j, ss in enumerate(perm_sets):
        A[j, list(ss)] = 1.0
    return A


# ---------------------------------------------------------------------------
# rates and likelihood
# ---------------------------------------------------------------------------

def _cell_rates(model: FactorModel, u, i, k=None) -> np.ndarray:
    if model.variant == "context":
        if k is None:
            raise InputError("context variant needs a context index")
        mu = (np.einsum("nr,nr->n", model.U[u], model.V[i])
              + np.einsum("nr,nr->n", model.U[u], model.P[k])
              + np.einsum("nr,nr->n", model.V[i], model.P[k]))
    else:
        mu = np.einsum("nr,nr->n", model.U[u], model.item_term()[i])
    return np.maximum(mu, RATE_FLOOR)


def rate(model: FactorModel, user: int, item: int, context: int | None = None) -> float:
    """Expected count for one (user, item[, context]) cell, floored at 1e-10."""
    n, m = model.U.shape[0], model.V.shape[0]
    if not (0 <= user < n and 0 <= item < m):
        raise InputError(f"index out of range: user {user} (n={n}), item {item} (m={m})")
    if model.variant == "context":
        if context is None or not 0 <= context < model.P.shape[0]:
            raise InputError("context index missing or out of range")
        return float(_cell_rates(model, np.array([user]), np.array([item]), np.array([context]))[0])
    return float(_cell_rates(model, np.array([user]), np.array([item]))[0])


def _cells(data):
    if isinstance(data, ContextQuads):
        return data.user, data.item, data.context, data.count.astype(np.float64)
    return data.user, data.item, None, data.count.astype(np.float64)


def loglik(model: FactorModel, data) -> float:
    """Poisson log-likelihood over the observed cells of ``data``."""
    u, i, k, y = _cells(data)
    mu = _cell_rates(model, u, i, k)
    return float(np.sum(y * np.log(mu) - mu - gammaln(y + 1.0)))


# ---------------------------------------------------------------------------
# multiplicative updates
# ---------------------------------------------------------------------------

def _scatter(idx, w, n):
    """Row sums of per-cell vectors ``w`` (cells x r) grouped by ``idx``."""
    out = np.zeros((n, w.shape[1]))
    np.add.at(out, idx, w)
    return out


def _mu_update(F, idx, coef, ratio, n):
    """F_ar <- F_ar * sum(ratio * coef) / sum(coef), sums over cells of row a."""
    num = _scatter(idx, coef * ratio[:, None], n)
    den = _scatter(idx, coef, n)
    return np.where(den > _TINY, F * num / np.maximum(den, _TINY), F)


def _sweep_privacy(U, V, P, lam, A, u, i, y):
    m = V.shape[0]
    Z = V + lam * (A @ P) if lam > 0 else V
    mu = np.maximum(np.einsum("nr,nr->n", U[u], Z[i]), RATE_FLOOR)
    U = _mu_update(U, u, Z[i], y / mu, U.shape[0])

    mu = np.maximum(np.einsum("nr,nr->n", U[u], Z[i]), RATE_FLOOR)
    V = _mu_update(V, i, U[u], y / mu, m)

    if lam > 0 and P.shape[0] > 0:
        Z = V + lam * (A @ P)
        mu = np.maximum(np.einsum("nr,nr->n", U[u], Z[i]), RATE_FLOOR)
        # per item: sum over cells of y/mu * u_i and of u_i; spread to permissions
        num_item = _scatter(i, U[u] * (y / mu)[:, None], m)
        den_item = _scatter(i, U[u], m)
        num = A.T @ num_item
        den = A.T @ den_item
        P = np.where(den > _TINY, P * num / np.maximum(den, _TINY), P)
    return U, V, P


def _sweep_context(U, V, P, u, i, k, y):
    def mu_of(U, V, P):
        return np.maximum(np.einsum("nr,nr->n", U[u], V[i]) + np.einsum("nr,nr->n", U[u], P[k])
                          + np.einsum("nr,nr->n", V[i], P[k]), RATE_FLOOR)

    mu = mu_of(U, V, P)
    U = _mu_update(U, u, V[i] + P[k], y / mu, U.shape[0])
    mu = mu_of(U, V, P)
    V = _mu_update(V, i, U[u] + P[k], y / mu, V.shape[0])
    mu = mu_of(U, V, P)
    P = _mu_update(P, k, U[u] + V[i], y / mu, P.shape[0])
    return U, V, P


def fit(data, variant: str = "privacy", r: int = 10, lam: float = 0.0,
        iters: int = 500, tol: float = 1e-8, seed: int | None = None,
        privacy: PrivacyProfile | None = None) -> FactorModel:
    """Fit a factor model by block multiplicative updates (U, then V, then P).

    Factors start from seeded uniform(0.1, 1.1) draws in the order U, V, P so
    that the plain and privacy variants share U and V initializations.
    Stops when the relative log-likelihood change falls below ``tol``.
    """
    if variant not in VARIANTS:
        raise InputError(f"variant must be one of {VARIANTS}")
    if r < 1:
        raise InputError("rank must be at least 1")
    if lam < 0:
        raise InputError("lambda must be nonnegative")
    u, i, k, y = _cells(data)
    if variant == "context" and k is None:
        raise InputError("context variant needs ContextQuads data")
    if np.any(y < 0):
        raise InputError("counts must be nonnegative")
    shape = data.shape
    n, m = shape[0], shape[1]
    rng = stream(seed, "poisson_rec.init")
    U = rng.uniform(0.1, 1.1, size=(n, r))
    V = rng.uniform(0.1, 1.1, size=(m, r))
    perm_sets: tuple = ()
    permission_ids: tuple = ()
    context_ids: tuple = ()
    if variant == "context":
        P = rng.uniform(0.1, 1.1, size=(shape[2], r))
        context_ids = data.context_ids
    elif variant == "privacy":
        if privacy is None:
            privacy = PrivacyProfile(data.item_ids, (), tuple(() for _ in range(m)))
        if len(privacy.sets) != m:
            raise InputError("privacy profile does not match the item catalog")
        perm_sets = privacy.sets
        permission_ids = privacy.permission_ids
        P = rng.uniform(0.1, 1.1, size=(privacy.n_permissions, r))
    else:
        P = np.zeros((0, r))
        lam = 0.0
    A = _perm_incidence(perm_sets, m, P.shape[0]) if variant == "privacy" else None

    def model(U, V, P, trace=()):
        return FactorModel(variant, U, V, P, float(lam), perm_sets, data.user_ids, data.item_ids,
                           context_ids, permission_ids, tuple(trace))

    trace = [loglik(model(U, V, P), data)]
    for _ in range(iters):
        if variant == "context":
            U, V, P = _sweep_context(U, V, P, u, i, k, y)
        else:
            U, V, P = _sweep_privacy(U, V, P, lam, A, u, i, y)
        ll = loglik(model(U, V, P), data)
        if not np.isfinite(ll):
            raise ComputationError("non-finite log-likelihood; check the rate floor")
        trace.append(ll)
        if abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-2])):
            break
    seen: dict = {}
    if variant == "context":
        for a, b, c in zip(u, i, k):
            seen.setdefault(f"{a},{c}", []).append(int(b))
        seen = {_seen_key(key): tuple(sorted(v)) for key, v in seen.items()}
    else:
        for a, b in zip(u, i):
            seen.setdefault(int(a), []).append(int(b))
        seen = {key: tuple(sorted(v)) for key, v in seen.items()}
    out = model(U, V, P, trace)
    return FactorModel(out.variant, out.U, out.V, out.P, out.lam, out.perm_sets, out.user_ids,
                       out.item_ids, out.context_ids, out.permission_ids, out.trace, seen)


# ---------------------------------------------------------------------------
# recommendation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TopK:
    items: list
    scores: list
    clamped: bool


def user_rates(model: FactorModel, user: int, context: int | None = None) -> np.ndarray:
    """Predicted rate of every item for one user (and context)."""
    n, m = model.U.shape[0], model.V.shape[0]
    if not 0 <= user < n:
        raise InputError(f"unknown user index {user}")
    items = np.arange(m)
    users = np.full(m, user)
    ctx = None
    if model.variant == "context":
        if context is None or not 0 <= context < model.P.shape[0]:
            raise InputError("context index missing or out of range")
        ctx = np.full(m, context)
    return _cell_rates(model, users, items, ctx)


def top_k(model: FactorModel, user: int, k: int, exclude=None,
          context: int | None = None) -> TopK:
    """Highest-rate unseen items, ties by ascending item index.

    ``exclude`` defaults to the items the user had in training.  A ``k``
    larger than the remaining catalog is clamped and flagged.
    """
    if k < 1:
        raise InputError("k must be at least 1")
    rates = user_rates(model, user, context)
    if exclude is None:
        key = user if model.variant != "context" else (user, context)
        exclude = model.seen.get(key, ())
    mask = np.ones(len(rates), dtype=bool)
    mask[list(exclude)] = False
    cand = np.flatnonzero(mask)
    order = cand[rank_by_score(rates[cand])]
    clamped = k > len(order)
    order = order[:k]
    return TopK([int(j) for j in order], [float(rates[j]) for j in order], clamped)


def precision_at_k(model: FactorModel, heldout, k: int, *, min_count: int = 1,
                   exclude: dict | None = None) -> float:
    """Mean over users of |top-k ∩ relevant| / k.

    Relevant items are held-out cells with count >= ``min_count``.  The
    ranking excludes each user's training items (``model.seen`` unless
    ``exclude`` maps user -> items).  Users with nothing relevant are skipped.
    """
    if len(heldout) == 0:
        raise InputError("held-out set is empty")
    if model.variant == "context":
        raise InputError("precision_at_k expects user-item data; aggregate contexts first")
    rel: dict[int, set] = {}
    for a, b, c in zip(heldout.user, heldout.item, heldout.count):
        if c >= min_count:
            rel.setdefault(int(a), set()).add(int(b))
    if not rel:
        raise InputError("no relevant held-out items")
    seen = model.seen if exclude is None else exclude
    vals = []
    for a in sorted(rel):
        top = top_k(model, a, k, exclude=seen.get(a, ()))
        vals.append(len(rel[a].intersection(top.items)) / k)
    return float(np.mean(vals))
