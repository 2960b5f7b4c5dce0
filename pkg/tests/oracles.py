"""Independent reference computations used by the module and acceptance tests.

Each one recomputes a quantity by a different route than the library:
plain loops, a generic optimizer, a dense solve or an exhaustive grid.
"""

import itertools
import math

import numpy as np
from scipy.optimize import minimize

from appgrowth.crowd_rank import pair_matrix


def straight_line_objective(W, X, labels, views, alpha, beta):
    """Term-by-term re-evaluation with plain Python loops."""
    n, p = X.shape
    K = W.shape[1]
    total = 0.0
    for i in range(n):
        z = [sum(W[j, k] * X[i, j] for j in range(p)) for k in range(K)]
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        total += lse - z[labels[i]]
    for k in range(K):
        for idx in views.values():
            block = [W[j, k] for j in idx]
            total += alpha * math.sqrt(sum(b * b for b in block))
            total += beta * sum(abs(b) for b in block) ** 2
    return total


def plain_logistic_oracle(d):
    """Unregularized multinomial logistic fit by L-BFGS (independent of the IRLS code path)."""
    X, Y = d.X, d.Y

    def f(w):
        Z = X @ w.reshape(d.p, d.K)
        m = Z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(Z - m).sum(axis=1))
        return float(np.sum(lse - np.sum(Y * Z, axis=1)))

    def grad(w):
        Z = X @ w.reshape(d.p, d.K)
        P = np.exp(Z - Z.max(axis=1, keepdims=True))
        P /= P.sum(axis=1, keepdims=True)
        return (X.T @ (P - Y)).ravel()

    r = minimize(f, np.zeros(d.p * d.K), jac=grad, method="L-BFGS-B",
                 options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 20000})
    return r.fun


def kendall_tau(a, b):
    """O(n^2) tau-a over all index pairs."""
    n = len(a)
    s = 0
    for i, j in itertools.combinations(range(n), 2):
        s += np.sign(a[i] - a[j]) * np.sign(b[i] - b[j])
    return s / (n * (n - 1) / 2)


def dense_rank_solution(Y, pairs, lam, C):
    B = pair_matrix(pairs, n_apps=Y.shape[0]).toarray()
    D = B @ Y
    w = np.linalg.solve(lam * np.eye(Y.shape[1]) + C * D.T @ D, C * D.T @ np.ones(len(D)))
    return w, lam * w @ w + C * np.sum((1 - D @ w) ** 2)


def brute_force_cohorts(log, period, horizon, end):
    """Plain loops over users and their events, no vectorization."""
    signups, events = {}, {}
    for u, t, k in zip(log.user.tolist(), log.timestamp.tolist(), log.kind):
        if k == "signup":
            signups[u] = t
        else:
            events.setdefault(u, []).append(t)
    origin = min(signups.values())
    cells = {}
    for u, s in signups.items():
        c = (s - origin) // period
        for i in range(horizon + 1):
            if s + (i + 1) * period > end and i > 0:
                continue
            act = i == 0 or any((t - s) // period == i for t in events.get(u, []))
            r, a = cells.get((c, i), (0, 0))
            cells[(c, i)] = (r + 1, a + int(act))
    return cells


def grid_oracle(cap, rate, capacity, total):
    """Best projected users over all 1%-granularity splits of the budget."""
    best = 0.0
    for a in range(101):
        for b in range(101 - a):
            s = np.array([a, b, 100 - a - b]) * total / 100
            best = max(best, float(np.sum(np.minimum(cap * -np.expm1(-rate * s), capacity))))
    return best


def per_term_loglik(model, data):
    """Straight-line re-evaluation: one cell at a time, lgamma from math."""
    total = 0.0
    for a, b, y in zip(data.user.tolist(), data.item.tolist(), data.count.tolist()):
        mu = max(sum(x * z for x, z in zip(model.U[a], model.item_term()[b])), 1e-10)
        total += y * math.log(mu) - mu - math.lgamma(y + 1)
    return total


def grid_oracle_2x2(y, step=0.01, hi=3.0):
    """Exhaustive max over u, v in {0, step, ..., hi}^2 of the rank-1 Poisson likelihood.

    With mu_ij = u_i v_j the likelihood splits as A(u) + B(v) - sum(u) sum(v)
    (+ const), so it is enough to tabulate the best A and B per grid sum.
    """
    g_ = np.round(np.arange(0, hi + step / 2, step), 10)
    rows, cols = y.sum(axis=1), y.sum(axis=0)

    def best_per_sum(w):
        la = np.where(g_ > 0, np.log(np.maximum(g_, 1e-300)), -np.inf)
        table = {}
        for a_idx, a in enumerate(g_):
            for b_idx, b in enumerate(g_):
                val = (w[0] * la[a_idx] if w[0] else 0.0) + (w[1] * la[b_idx] if w[1] else 0.0)
                key = a_idx + b_idx
                if val > table.get(key, -np.inf):
                    table[key] = val
        return table

    A, B = best_per_sum(rows), best_per_sum(cols)
    const = -sum(math.lgamma(v + 1) for v in y.ravel())
    best = -np.inf
    for su, av in A.items():
        for sv, bv in B.items():
            best = max(best, av + bv - (su * step) * (sv * step))
    return best + const
