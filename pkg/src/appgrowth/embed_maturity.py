"""Word embeddings to app maturity levels.

Pipeline: full-softmax skip-gram word vectors, app vectors as the mean of
their words' input vectors, one-vs-rest squared-hinge linear classifiers for
the mature-content labels with label correlations mixed into the scores, and
a severity policy that turns a predicted label set into a maturity level.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from . import _kernels
from ._format import dumps
from .errors import ComputationError, InputError
from .ingest import TokenCorpus
from .rng import stream

log = logging.getLogger(__name__)

LEVELS = ("everyone", "low", "medium", "high")
DEFAULT_GAMMA = 0.2


# ---------------------------------------------------------------------------
# skip-gram
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Input vectors ``win`` (v_w) and output vectors ``wout`` (v'_w)."""

    vocabulary: tuple[str, ...]
    win: np.ndarray
    wout: np.ndarray
    window: int
    trace: tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return self.win.shape[1]

    def index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.vocabulary)}

    def to_dict(self) -> dict:
        return {"kind": "skipgram", "vocabulary": list(self.vocabulary), "dim": self.dim,
                "window": self.window, "input": self.win.tolist(),
                "output": self.wout.tolist(), "objective_trace": list(self.trace)}

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingTable":
        dim = d["dim"]
        return cls(tuple(d["vocabulary"]),
                   np.array(d["input"], dtype=np.float64).reshape(-1, dim),
                   np.array(d["output"], dtype=np.float64).reshape(-1, dim),
                   d["window"], tuple(d.get("objective_trace", ())))

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def window_pairs(documents, index: dict[str, int], c: int) -> tuple[np.ndarray, np.ndarray, int]:
    """All (center, context) index pairs within distance ``c`` inside each document.

    Returns the two index arrays and the number of center tokens T.
    """
    centers, contexts = [], []
    T = 0
    for doc in documents:
        ids = [index[w] for w in doc if w in index]
        T += len(ids)
        for t, w in enumerate(ids):
            for j in range(max(0, t - c), min(len(ids), t + c + 1)):
                if j != t:
                    centers.append(w)
                    contexts.append(ids[j])
    return np.array(centers, dtype=np.int64), np.array(contexts, dtype=np.int64), T


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax_prob(win: np.ndarray, wout: np.ndarray, w_in: int) -> np.ndarray:
    """Pr(w_O | w_I) over every output word w_O."""
    return np.exp(_log_softmax(wout @ win[w_in]))


def pair_log_prob(win, wout, w_in: int, w_out: int) -> float:
    return float(_log_softmax(wout @ win[w_in])[w_out])


def pair_log_prob_grad(win, wout, w_in: int, w_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ln Pr(w_out | w_in) wrt v_{w_in} (d,) and every v'_w (W x d)."""
    h = win[w_in]
    p = softmax_prob(win, wout, w_in)
    g_in = wout[w_out] - p @ wout
    coef = -p
    coef[w_out] += 1.0
    return g_in, np.outer(coef, h)


def corpus_objective(win, wout, centers, contexts, T: int) -> float:
    """(1/T) sum over window pairs of ln Pr(context | center)."""
    if len(centers) == 0:
        return 0.0
    lp = _log_softmax(win[centers] @ wout.T)
    return float(np.sum(lp[np.arange(len(centers)), contexts])) / T


def train_skipgram(corpus: TokenCorpus, d: int = 50, c: int = 2, lr: float = 0.025,
                   epochs: int = 5, seed: int | None = None, negative: int = 0) -> EmbeddingTable:
    """Stochastic gradient ascent on the average skip-gram log-likelihood.

    Input vectors start uniform in (-0.5/d, 0.5/d); output vectors start at
    zero, as in word2vec.  Pairs are visited in a fresh seeded order each
    epoch.  The trace holds the exact corpus objective before training and
    after every epoch.

    ``negative`` is reserved for negative sampling; only 0 (exact softmax)
    is accepted for now.
    """
    if negative != 0:
        raise InputError("negative sampling is not available; use negative=0")
    if d < 1 or c < 1:
        raise InputError("dimension and window must be at least 1")
    if lr <= 0:
        raise InputError("learning rate must be positive")
    if epochs < 0:
        raise InputError("epochs must be nonnegative")
    vocab = corpus.vocabulary()
    if len(vocab) < 2:
        raise InputError("vocabulary needs at least two words")
    index = {w: i for i, w in enumerate(vocab)}
    centers, contexts, T = window_pairs(corpus.documents, index, c)
    if len(centers) == 0:
        raise InputError("corpus has no window pairs")
    rng = stream(seed, "embed_maturity.skipgram")
    win = rng.uniform(-0.5 / d, 0.5 / d, size=(len(vocab), d))
    wout = np.zeros((len(vocab), d))
    trace = [corpus_objective(win, wout, centers, contexts, T)]
    for _ in range(epochs):
        order = rng.permutation(len(centers)).astype(np.int64)
        _kernels.skipgram_epoch(win, wout, centers, contexts, order, float(lr))
        obj = corpus_objective(win, wout, centers, contexts, T)
        if not np.isfinite(obj):
            raise ComputationError("skip-gram objective diverged; lower the learning rate")
        trace.append(obj)
    return EmbeddingTable(vocab, win, wout, c, tuple(trace))


def app_embed(doc, table: EmbeddingTable, index: dict[str, int] | None = None) -> np.ndarray:
    """Mean input vector of the in-vocabulary tokens of ``doc``."""
    index = table.index() if index is None else index
    ids = [index[w] for w in doc if w in index]
    if not ids:
        raise InputError("document has no in-vocabulary tokens")
    return table.win[ids].mean(axis=0)


def embed_documents(docs, table: EmbeddingTable) -> np.ndarray:
    index = table.index()
    return np.vstack([app_embed(doc, table, index) for doc in docs])


# ---------------------------------------------------------------------------
# multi-label classifier
# ---------------------------------------------------------------------------

def _svm_objective(wb, X, y, reg):
    m = 1.0 - y * (X @ wb[:-1] + wb[-1])
    h = np.maximum(m, 0.0)
    return 0.5 * reg * float(wb[:-1] @ wb[:-1]) + float(h @ h) / len(y)


def _svm_grad(wb, X, y, reg):
    h = np.maximum(1.0 - y * (X @ wb[:-1] + wb[-1]), 0.0)
    r = -2.0 * y * h / len(y)
    g = np.empty_like(wb)
    g[:-1] = X.T @ r + reg * wb[:-1]
    g[-1] = r.sum()
    return g


def fit_binary_svm(X: np.ndarray, y: np.ndarray, reg: float = 1e-2, *, tol: float = 1e-9,
                   max_iter: int = 20_000) -> tuple[np.ndarray, float]:
    """Squared-hinge linear SVM, L2 on the weights (not the bias), by L-BFGS.

    ``y`` is 0/1.  Returns ``(w, b)``.
    """
    if reg <= 0:
        raise InputError("regularizer must be positive")
    s = np.where(np.asarray(y) > 0, 1.0, -1.0)
    res = optimize.minimize(_svm_objective, np.zeros(X.shape[1] + 1), args=(X, s, reg),
                            jac=_svm_grad, method="L-BFGS-B",
                            options={"gtol": tol, "ftol": 0.0, "maxiter": max_iter})
    return res.x[:-1].copy(), float(res.x[-1])


def label_correlation(Yind: np.ndarray) -> np.ndarray:
    """Pearson correlation between label indicator columns.

    Zero-variance labels get an identity row and column.
    """
    Yind = np.asarray(Yind, dtype=np.float64)
    L = Yind.shape[1]
    D = Yind - Yind.mean(axis=0)
    sd = np.sqrt(np.sum(D * D, axis=0))
    ok = sd > 0
    R = np.eye(L)
    if ok.any():
        Z = D[:, ok] / sd[ok]
        R[np.ix_(ok, ok)] = np.clip(Z.T @ Z, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return R


def _check_policy(policy: dict, labels) -> None:
    for lab in labels:
        if lab not in policy:
            raise InputError(f"label {lab!r} is missing from the maturity policy")
        if policy[lab] not in LEVELS:
            raise InputError(f"policy level {policy[lab]!r} for {lab!r} is not one of {LEVELS}")


def maturity_level(labels, policy: dict) -> str:
    """Most severe policy level among ``labels``; ``everyone`` for none."""
    labels = list(labels)
    _check_policy(policy, labels)
    return max((policy[lab] for lab in labels), key=LEVELS.index, default=LEVELS[0])


@dataclass(frozen=True, eq=False)
class MaturityModel:
    labels: tuple[str, ...]
    W: np.ndarray  # labels x d
    b: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    R: np.ndarray
    gamma: float
    policy: dict = field(default_factory=dict)
    embedding: EmbeddingTable | None = None

    def raw_scores(self, E: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(E) - self.center) / self.scale
        return Z @ self.W.T + self.b

    def scores(self, E: np.ndarray) -> np.ndarray:
        """Correlation-mixed scores s + gamma R s, one column per label."""
        s = self.raw_scores(E)
        return s + self.gamma * s @ self.R.T

    def predict(self, E: np.ndarray) -> list[tuple[str, ...]]:
        pos = self.scores(E) > 0
        return [tuple(lab for lab, p in zip(self.labels, row) if p) for row in pos]

    def levels(self, E: np.ndarray) -> list[str]:
        return [maturity_level(s, self.policy) for s in self.predict(E)]

    def to_dict(self) -> dict:
        return {"kind": "maturity", "labels": list(self.labels), "W": self.W.tolist(),
                "b": self.b.tolist(), "center": self.center.tolist(),
                "scale": self.scale.tolist(), "R": self.R.tolist(), "gamma": self.gamma,
                "policy": dict(self.policy),
                "embedding": None if self.embedding is None else self.embedding.to_dict()}

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MaturityModel":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        L = len(d["labels"])
        emb = None if d["embedding"] is None else EmbeddingTable.from_dict(d["embedding"])
        dim = len(d["center"])
        return cls(tuple(d["labels"]), np.array(d["W"], dtype=np.float64).reshape(L, dim),
                   np.array(d["b"], dtype=np.float64), np.array(d["center"], dtype=np.float64),
                   np.array(d["scale"], dtype=np.float64),
                   np.array(d["R"], dtype=np.float64).reshape(L, L), d["gamma"], d["policy"], emb)


def fit_maturity(E: np.ndarray, label_sets, gamma: float = DEFAULT_GAMMA, reg: float = 1e-2,
                 *, policy: dict | None = None, labels=None,
                 embedding: EmbeddingTable | None = None) -> MaturityModel:
    """One-vs-rest squared-hinge classifiers over standardized app embeddings.

    Labels that are all-positive or all-negative in training are dropped with
    a warning.  ``R`` is the Pearson correlation of the kept labels'
    indicators.
    """
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] != len(label_sets):
        raise InputError("one embedding row per label set is required")
    if E.shape[0] < 2:
        raise InputError("need at least two apps")
    universe = tuple(sorted({lab for s in label_sets for lab in s})) if labels is None \
        else tuple(labels)
    if policy is not None:
        _check_policy(policy, universe)
    Yind = np.array([[lab in s for lab in universe] for s in label_sets], dtype=np.float64)
    Yind = Yind.reshape(len(label_sets), len(universe))
    frac = Yind.mean(axis=0)
    keep = (frac > 0) & (frac < 1)
    for lab, k in zip(universe, keep):
        if not k:
            log.warning("label %r is all-positive or all-negative in training; excluded", lab)
    if not keep.any():
        raise InputError("no label has both positive and negative examples")
    kept = tuple(lab for lab, k in zip(universe, keep) if k)
    Yk = Yind[:, keep]
    center = E.mean(axis=0)
    scale = E.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (E - center) / scale
    W = np.zeros((len(kept), E.shape[1]))
    b = np.zeros(len(kept))
    for j in range(len(kept)):
        W[j], b[j] = fit_binary_svm(Z, Yk[:, j], reg)
    return MaturityModel(kept, W, b, center, scale, label_correlation(Yk), float(gamma),
                         dict(policy or {}), embedding)
