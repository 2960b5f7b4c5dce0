"""Seeded synthetic data with known ground truth, shared by tests and fixtures."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from appgrowth.ingest import (AppDocs, ContextQuads, PrivacyProfile, RatingsTriples,
                              TokenCorpus, make_annotations, make_event_log, make_multiview,
                              make_study)

DAY = 86_400
WEEK = 7 * DAY
T0 = 1_700_000_000 - 1_700_000_000 % WEEK


def informative_multiview(n=200, seed=0, noise=0.5):
    """Three 3-feature views; only view v1 drives the label."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 9))
    z = X[:, 0] - X[:, 1] + 0.5 * X[:, 2] + noise * rng.normal(size=n)
    labels = np.where(z > 0, "risky", "safe")
    views = {"v1": [0, 1, 2], "v2": [3, 4, 5], "v3": [6, 7, 8]}
    return make_multiview(X, labels, views, classes=("risky", "safe"),
                          app_ids=[f"app{i:03d}" for i in range(n)],
                          feature_names=[f"f{j}" for j in range(9)])


def random_multiview(n=40, p=6, K=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    W = rng.normal(size=(p, K))
    logits = X @ W + rng.gumbel(size=(n, K))
    classes = tuple(f"c{k}" for k in range(K))
    lab = np.array(classes)[logits.argmax(axis=1)]
    half = p // 2
    views = {"a": list(range(half)), "b": list(range(half, p))}
    return make_multiview(X, lab, views, classes=classes)


def event_log(n_users=1000, seed=0, weeks=10, actions=("share", "browse")):
    """Signups over ``weeks`` weeks; weekly activity decays geometrically."""
    rng = np.random.default_rng(seed)
    users, ts, kinds = [], [], []
    end = T0 + (weeks + 4) * WEEK
    for u in range(n_users):
        uid = f"u{u:05d}"
        s = T0 + int(rng.integers(0, weeks * WEEK))
        users.append(uid)
        ts.append(s)
        kinds.append("signup")
        engaged = rng.uniform()
        p = 0.5 + 0.4 * engaged
        for w in range(0, 14):
            t = s + w * WEEK + int(rng.integers(0, WEEK))
            if t > end:
                break
            if w > 0 and rng.uniform() > p ** w:
                continue
            for a in actions:
                rate = 2.0 * engaged if a == actions[0] else 1.0
                for _ in range(rng.poisson(rate)):
                    tt = min(s + w * WEEK + int(rng.integers(0, WEEK)), end)
                    users.append(uid)
                    ts.append(tt)
                    kinds.append(f"action:{a}")
    return make_event_log(users, np.array(ts, dtype=np.int64), kinds)


def annotations(n_apps=2000, reliabilities=(0.9, 0.9, 0.6), seed=0, prevalence=0.4):
    """Every annotator labels every app, correct with its own probability."""
    rng = np.random.default_rng(seed)
    truth = (rng.uniform(size=n_apps) < prevalence).astype(np.int64)
    apps, anns, labs = [], [], []
    for m, th in enumerate(reliabilities):
        ok = rng.uniform(size=n_apps) < th
        lab = np.where(ok, truth, 1 - truth)
        apps += [f"a{i:05d}" for i in range(n_apps)]
        anns += [f"m{m}"] * n_apps
        labs += lab.tolist()
    return make_annotations(apps, anns, np.array(labs)), truth


def exact_rate_annotations(n_apps=30, agreements=(27, 27, 18)):
    """Annotator m agrees with the truth on exactly ``agreements[m]`` apps."""
    truth = np.array([i % 2 for i in range(n_apps)])
    apps, anns, labs = [], [], []
    start = 0
    for m, k in enumerate(agreements):
        lab = truth.copy()
        # disjoint error sets: no two annotators err on the same app
        wrong = np.arange(start, start + n_apps - k)
        start += n_apps - k
        lab[wrong] = 1 - lab[wrong]
        apps += [f"a{i:03d}" for i in range(n_apps)]
        anns += [f"m{m}"] * n_apps
        labs += lab.tolist()
    return make_annotations(apps, anns, np.array(labs)), truth


def multi_aspect_posterior(n_apps=60, L=3, seed=0):
    """Latent aspect matrix Y, planted weights and the resulting true scores."""
    rng = np.random.default_rng(seed)
    Y = rng.uniform(size=(n_apps, L))
    w = np.array([2.0, 1.0, 0.5])[:L]
    return Y, w, Y @ w


def planted_pairs(scores, n_pairs, seed=0):
    rng = np.random.default_rng(seed)
    n = len(scores)
    out = []
    while len(out) < n_pairs:
        i, j = rng.integers(0, n, size=2)
        if i == j:
            continue
        out.append((i, j) if scores[i] > scores[j] else (j, i))
    return np.array(out, dtype=np.int64)


def confounded_study(n=5000, tau=2.0, seed=0, strength=0.3):
    """x1 confounds treatment and outcome; x2 is noise.

    T ~ Bernoulli(Phi(strength x1)), Y = tau T + 1.5 x1 + 0.5 x2 + N(0, 1).
    """
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    t = (rng.uniform(size=n) < ndtr(strength * X[:, 0])).astype(np.int64)
    y = tau * t + 1.5 * X[:, 0] + 0.5 * X[:, 1] + rng.normal(size=n)
    return make_study(y, t, X, ("x1", "x2"))


def budget_problem(seed, C=3):
    rng = np.random.default_rng(seed)
    cap = rng.uniform(500.0, 5000.0, size=C)
    rate = rng.uniform(1e-4, 2e-3, size=C)
    capacity = cap * rng.uniform(0.4, 1.2, size=C)
    total = float(rng.uniform(1000.0, 5000.0))
    return cap, rate, capacity, total


def rank1_ratings(n=30, m=20, seed=0):
    """Fully observed y_ij = round(a_i b_j) with products >= 25."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(5.0, 15.0, size=n)
    b = rng.uniform(5.0, 15.0, size=m)
    u, i = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    u, i = u.ravel(), i.ravel()
    y = np.round(a[u] * b[i]).astype(np.int64)
    return _triples(n, m, u, i, y), a, b


def _triples(n, m, u, i, y):
    return RatingsTriples(tuple(f"u{k:04d}" for k in range(n)), tuple(f"i{k:04d}" for k in range(m)),
                          np.asarray(u, dtype=np.int64), np.asarray(i, dtype=np.int64),
                          np.asarray(y, dtype=np.int64))


def random_ratings(n=15, m=12, density=0.5, seed=0):
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=(n, m)) < density
    u, i = np.nonzero(mask)
    y = rng.poisson(2.0, size=len(u))
    return _triples(n, m, u, i, y)


def random_privacy(item_ids, S=4, seed=0):
    rng = np.random.default_rng(seed)
    sets = tuple(tuple(sorted(rng.choice(S, size=int(rng.integers(0, 3)), replace=False).tolist()))
                 for _ in item_ids)
    return PrivacyProfile(tuple(item_ids), tuple(f"perm{s}" for s in range(S)), sets)


def random_context(n=10, m=8, c=3, density=0.4, seed=0):
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=(n, m, c)) < density
    u, i, k = np.nonzero(mask)
    y = rng.poisson(2.0, size=len(u))
    return ContextQuads(tuple(f"u{x}" for x in range(n)), tuple(f"i{x}" for x in range(m)),
                        tuple(f"c{x}" for x in range(c)), u.astype(np.int64), i.astype(np.int64),
                        k.astype(np.int64), y.astype(np.int64))


def block_ratings(n_users=60, n_items=40, n_blocks=2, seed=0, p_in=0.6, p_out=0.3,
                  rate_in=5.0, rate_out=1.0, heldout_frac=0.3):
    """Users prefer items of their own block: they rate them more often and
    with larger counts.

    Returns (train, heldout, user blocks, item blocks).  A fraction of the
    observed cells is held out; relevance is block membership, so the
    held-out set lists every in-block item a user has no training cell for.
    """
    rng = np.random.default_rng(seed)
    ub = np.arange(n_users) % n_blocks
    ib = np.arange(n_items) % n_blocks
    inb = ub[:, None] == ib[None, :]
    obs = rng.uniform(size=(n_users, n_items)) < np.where(inb, p_in, p_out)
    u, i = np.nonzero(obs)
    y = rng.poisson(np.where(inb[u, i], rate_in, rate_out))
    held = rng.uniform(size=len(u)) < heldout_frac
    train = _triples(n_users, n_items, u[~held], i[~held], y[~held])
    seen = np.zeros((n_users, n_items), dtype=bool)
    seen[u[~held], i[~held]] = True
    hu, hi = np.nonzero(inb & ~seen)
    heldout = _triples(n_users, n_items, hu, hi, np.ones(len(hu), dtype=np.int64))
    return train, heldout, ub, ib


def bigram_corpus(n_tokens=200):
    return TokenCorpus((tuple("ab"[t % 2] for t in range(n_tokens)),))


def topic_corpus(n_docs=200, seed=0, doc_len=30):
    """Two topic vocabularies plus shared filler words; one document per line."""
    rng = np.random.default_rng(seed)
    topics = {"violence": [f"fight{k}" for k in range(6)],
              "drugs": [f"pill{k}" for k in range(6)]}
    filler = [f"word{k}" for k in range(12)]
    docs, labels = [], []
    for d in range(n_docs):
        labs = tuple(sorted(t for t in topics if rng.uniform() < 0.4))
        pool = list(filler)
        for t in labs:
            pool += topics[t] * 3
        docs.append(tuple(rng.choice(pool, size=doc_len)))
        labels.append(labs)
    return TokenCorpus(tuple(docs)), labels


def app_docs_from(corpus, labels, prefix="app"):
    return AppDocs(tuple(f"{prefix}{k:04d}" for k in range(len(corpus.documents))),
                   tuple(" ".join(d) for d in corpus.documents), tuple(labels))


def planted_embeddings(n=500, d=10, L=3, seed=0):
    """Embeddings with labels from a known linear model (margin 0.3 offset)."""
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(n, d))
    W = rng.normal(size=(L, d))
    Y = E @ W.T + 0.3 > 0
    names = tuple(f"label{j}" for j in range(L))
    sets = [tuple(names[j] for j in range(L) if Y[a, j]) for a in range(n)]
    return E, sets, names, Y
