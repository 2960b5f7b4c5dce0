import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import generators as g
from oracles import plain_logistic_oracle, straight_line_objective
from appgrowth import multiview_risk as mr
from appgrowth.errors import InputError
from appgrowth.ingest import make_multiview


def small_instance(seed=0, n=5, p=4, K=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    labels = rng.integers(0, K, size=n)
    labels[:K] = np.arange(K)
    classes = tuple(f"c{k}" for k in range(K))
    d = make_multiview(X, np.array(classes)[labels], {"a": [0, 1], "b": list(range(2, p))},
                       classes=classes)
    W = rng.normal(size=(p, K))
    return d, W


def separable_toy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 1.0]) > 0
    return make_multiview(X, np.where(y, "risky", "safe"), {"a": [0, 1], "b": [2, 3]},
                          classes=("risky", "safe"))


def test_objective_at_zero_is_n_log_k():
    d, _ = small_instance(n=7, K=3)
    W = np.zeros((d.p, d.K))
    assert mr.objective(W, d, 0.0, 0.0) == pytest.approx(7 * math.log(3), abs=1e-12)
    assert mr.objective(W, d, 3.0, 5.0) == pytest.approx(7 * math.log(3), abs=1e-12)


def test_objective_matches_straight_line_oracle():
    d, W = small_instance(seed=0, n=5, p=4, K=3)
    ours = mr.objective(W, d, 0.5, 0.3)
    oracle = straight_line_objective(W, d.X, d.labels, d.views, 0.5, 0.3)
    assert ours == pytest.approx(oracle, abs=1e-12)


def test_objective_dimension_mismatch():
    d, W = small_instance()
    with pytest.raises(InputError):
        mr.objective(W[:-1], d, 0.1, 0.1)


def test_smooth_gradient_matches_finite_differences():
    d, W = small_instance(seed=3, n=3, p=4, K=2)
    g_an = mr.smooth_grad(W, d.X, d.Y)
    h = 1e-6
    g_fd = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        E = np.zeros_like(W)
        E[idx] = h
        g_fd[idx] = (mr.smooth_loss(W + E, d.X, d.Y) - mr.smooth_loss(W - E, d.X, d.Y)) / (2 * h)
    rel = np.linalg.norm(g_an - g_fd) / np.linalg.norm(g_fd)
    assert rel < 1e-6


def test_unregularized_separable_toy():
    d = separable_toy()
    m = mr.fit_irls(d, 0.0, 0.0)
    r = mr.predict_and_rank(m, d)
    pred = np.argmax(r.probabilities, axis=1)
    assert np.mean(pred == d.labels) == 1.0
    assert abs(m.trace[-1] - plain_logistic_oracle(d)) < 1e-4


def test_unregularized_matches_oracle_nonseparable():
    d = g.random_multiview(n=80, p=6, K=3, seed=1)
    m = mr.fit_irls(d, 0.0, 0.0)
    # oracle value frozen from plain_logistic_oracle on this instance
    assert plain_logistic_oracle(d) == pytest.approx(41.5467543754981, abs=1e-9)
    assert abs(m.trace[-1] - 41.5467543754981) < 1e-4


def test_huge_alpha_collapses():
    d = g.informative_multiview(n=100, seed=2)
    m = mr.fit_irls(d, 1e6, 0.0)
    for norms in mr.block_norms(m.W, m.views).values():
        assert np.all(norms < 1e-3)


def test_informative_view_pruning():
    d = g.informative_multiview(n=200, seed=0)
    m = mr.fit_irls(d, 20.0, 0.0)
    norms = mr.block_norms(m.W, m.views)
    assert np.all(norms["v2"] < 1e-3) and np.all(norms["v3"] < 1e-3)
    assert np.all(norms["v1"] > 0.1)
    imp = mr.view_importance(m)
    assert max(imp, key=imp.get) == "v1"


@pytest.mark.parametrize("seed", range(10))
def test_trace_non_increasing(seed):
    d = g.random_multiview(n=40, seed=seed)
    m = mr.fit_irls(d, 0.5, 0.3)
    assert np.all(np.diff(m.trace) <= 1e-9)
    assert m.trace[0] == pytest.approx(40 * math.log(3))


def test_doubling_alpha_does_not_grow_blocks():
    d = g.informative_multiview(n=200, seed=0)
    a = mr.block_norms(mr.fit_irls(d, 5.0, 0.1).W, d.views)
    b = mr.block_norms(mr.fit_irls(d, 10.0, 0.1).W, d.views)
    for v in a:
        assert np.all(b[v] <= a[v] + 1e-8)


def test_permutation_equivariance():
    d = g.random_multiview(n=30, p=6, K=3, seed=4)
    perm = np.array([3, 0, 4, 1, 5, 2])
    inv = np.argsort(perm)
    views = {v: [int(inv[j]) for j in idx] for v, idx in d.views.items()}
    d2 = make_multiview(d.X[:, perm], np.array(d.classes)[d.labels], views, classes=d.classes)
    m1 = mr.fit_irls(d, 0.4, 0.2)
    m2 = mr.fit_irls(d2, 0.4, 0.2)
    assert m2.trace[-1] == pytest.approx(m1.trace[-1], rel=1e-6)
    assert np.allclose(m2.W, m1.W[perm], atol=1e-4)
    W = np.random.default_rng(0).normal(size=(6, 3))
    assert mr.objective(W[perm], d2, 0.4, 0.2) == pytest.approx(mr.objective(W, d, 0.4, 0.2),
                                                                abs=1e-12)


def test_max_iter_flagged_not_raised():
    d = g.random_multiview(n=40, seed=0)
    m = mr.fit_irls(d, 0.5, 0.3, max_iter=1)
    assert not m.converged
    assert m.diagnostics["max_iter_reached"]


def test_negative_penalty_rejected():
    d = g.random_multiview()
    with pytest.raises(InputError):
        mr.fit_irls(d, -1.0, 0.0)
    with pytest.raises(InputError):
        mr.fit_irls(d, 0.0, 0.0, tol=0.0)


def _model(W, classes=("risky", "safe"), names=("f1", "f2")):
    return mr.RiskModel(np.asarray(W, dtype=float), 0.0, 0.0, {"all": np.arange(len(names))},
                        names, classes)


def test_predict_zero_model_uniform():
    m = _model(np.zeros((2, 4)), classes=("risky", "a", "b", "c"))
    P = mr.predict_proba(m, np.ones((3, 2)))
    assert np.allclose(P, 0.25, atol=1e-15)


def test_predict_analytic_softmax():
    m = _model([[0.0, math.log(3)], [0.0, 0.0]])
    P = mr.predict_proba(m, np.array([[1.0, 0.0]]))
    assert P[0] == pytest.approx([0.25, 0.75], abs=1e-15)
    assert abs(P.sum() - 1) < 1e-12


def test_ranking_ties_by_index():
    m = _model([[1.0, 0.0], [0.0, 0.0]])
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 5.0], [1.0, 0.0]])
    r = mr.predict_and_rank(m, X)
    assert r.order.tolist() == [1, 3, 0, 2]
    assert r.rank.tolist() == [3, 1, 4, 2]


def test_unknown_risk_class():
    m = _model(np.zeros((2, 2)))
    with pytest.raises(InputError, match="risk class"):
        mr.predict_and_rank(m, np.zeros((1, 2)), risk_class="evil")


def test_view_importance_zero_and_single_view():
    m = _model(np.zeros((2, 2)))
    assert mr.view_importance(m) == {"all": 0.0}


def test_model_roundtrip(tmp_path):
    d = g.informative_multiview(n=40, seed=1)
    m = mr.fit_irls(d, 1.0, 0.1)
    m.save(tmp_path / "m.json")
    m2 = mr.RiskModel.load(tmp_path / "m.json")
    assert np.array_equal(m.W, m2.W)
    assert m2.trace == m.trace
    assert {k: v.tolist() for k, v in m2.views.items()} == {k: v.tolist() for k, v in m.views.items()}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_objective_oracle_property(seed, alpha, beta):
    d, W = small_instance(seed=seed)
    assert mr.objective(W, d, alpha, beta) == pytest.approx(
        straight_line_objective(W, d.X, d.labels, d.views, alpha, beta), rel=1e-12, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_probabilities_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    m = _model(rng.normal(scale=10, size=(2, 3)), classes=("risky", "x", "y"))
    P = mr.predict_proba(m, rng.normal(scale=10, size=(5, 2)))
    assert np.all(np.abs(P.sum(axis=1) - 1) < 1e-12)
