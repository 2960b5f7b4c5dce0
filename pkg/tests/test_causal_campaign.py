import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

import generators as g
from oracles import grid_oracle
from appgrowth import causal_campaign as cc
from appgrowth.errors import InputError, PerfectSeparationError
from appgrowth.ingest import make_study


def randomized_study(n=5000, tau=2.0, seed=0, p=0.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    t = (rng.uniform(size=n) < p).astype(int)
    y = tau * t + rng.normal(size=n)
    return make_study(y, t, X)


# --- propensity ------------------------------------------------------------

def test_randomized_scores_near_treated_rate():
    st_ = randomized_study(n=2000, seed=1)
    scores = cc.fit_propensity(st_).scores(st_.X)
    assert np.all(np.abs(scores - st_.treatment.mean()) <= 0.05)


def test_probit_logit_rank_agreement():
    s = g.confounded_study(n=2000, seed=3)
    a = cc.fit_propensity(s, "probit").scores(s.X)
    b = cc.fit_propensity(s, "logit").scores(s.X)
    assert spearmanr(a, b).statistic > 0.99


def test_perfect_separation():
    x = np.linspace(-1, 1, 40)
    s = make_study(np.zeros(40), (x > 0).astype(int), x[:, None])
    with pytest.raises(PerfectSeparationError, match="trim"):
        cc.fit_propensity(s)


def test_degree_two_and_bad_args():
    s = g.confounded_study(n=500, seed=2)
    m = cc.fit_propensity(s, degree=2)
    assert len(m.coef) == 1 + 2 + 3
    assert np.all((m.scores(s.X) >= 0.01) & (m.scores(s.X) <= 0.99))
    with pytest.raises(InputError):
        cc.fit_propensity(s, degree=3)
    with pytest.raises(InputError):
        cc.fit_propensity(s, link="cloglog")
    with pytest.raises(InputError):
        cc.fit_propensity(make_study(np.zeros(3), [1, 1, 1], np.ones((3, 1))))


def test_probit_recovers_generator_coefficient():
    s = g.confounded_study(n=5000, seed=0)
    m = cc.fit_propensity(s)
    # generator: T ~ Phi(0.3 x1); slope on the standardized scale is 0.3 * sd(x1)
    slope = m.coef[1] / m.scale[0]
    assert slope == pytest.approx(0.3, abs=0.06)
    assert abs(m.coef[2] / m.scale[1]) < 0.06


# --- balance ---------------------------------------------------------------

def test_balance_identical_arms_zero():
    X = np.repeat(np.arange(10.0), 2)[:, None]
    t = np.tile([0, 1], 10)
    s = make_study(np.zeros(20), t, X)
    rep = cc.check_balance(np.full(20, 0.5) + np.repeat(np.arange(10), 2) * 1e-3, s, 2)
    assert np.all(rep.smd_raw == 0) and np.all(rep.smd_adjusted == 0)
    assert rep.passed


def test_balance_confounded_study():
    s = g.confounded_study(n=5000, seed=0)
    rep = cc.check_balance(cc.fit_propensity(s).scores(s.X), s)
    assert rep.smd_raw[0] > 0.3
    assert np.all(rep.smd_adjusted < 0.1)
    assert rep.passed
    assert rep.to_dict()["pass"] is True


def test_balance_one_stratum_rejected():
    s = g.confounded_study(n=50, seed=0)
    with pytest.raises(InputError):
        cc.check_balance(np.full(50, 0.5), s, 1)


def test_balance_unusable_stratum_flagged():
    t = np.array([0, 0, 0, 1, 0, 1, 1, 1])
    s = make_study(np.zeros(8), t, np.arange(8.0)[:, None])
    rep = cc.check_balance(np.linspace(0.1, 0.9, 8), s, 4)
    assert rep.usable.tolist() == [False, True, True, False]


# --- effects ---------------------------------------------------------------

def test_randomized_ate_matches_difference_in_means():
    s = randomized_study(seed=0)
    e = cc.fit_propensity(s).scores(s.X)
    eff = cc.estimate_effects(s, e)
    dm = cc.difference_in_means(s)
    assert abs(eff.ate - 2.0) <= 0.15
    assert abs(eff.ate - dm) <= 0.05


def test_constant_score_ipw_equals_difference_in_means():
    s = randomized_study(n=3000, seed=4)
    e = np.full(len(s), s.treatment.mean())
    assert abs(cc.estimate_effects(s, e).ate - cc.difference_in_means(s)) < 1e-10


def test_confounded_effects():
    s = g.confounded_study(n=5000, tau=2.0, seed=0)
    e = cc.fit_propensity(s).scores(s.X)
    assert abs(cc.difference_in_means(s) - 2.0) > 0.3
    for est in ("ipw", "stratified"):
        eff = cc.estimate_effects(s, e, est)
        assert abs(eff.ate - 2.0) <= 0.15
        assert abs(eff.ate - eff.att) < 0.1


@pytest.mark.parametrize("est", ["ipw", "stratified"])
def test_zero_effect(est):
    s = g.confounded_study(n=5000, tau=0.0, seed=1)
    e = cc.fit_propensity(s).scores(s.X)
    assert abs(cc.estimate_effects(s, e, est).ate) < 0.1


def test_stratified_is_convex_combination():
    s = g.confounded_study(n=2000, seed=6)
    eff = cc.estimate_effects(s, cc.fit_propensity(s).scores(s.X), "stratified")
    d = [r["difference"] for r in eff.strata if r["usable"]]
    assert min(d) <= eff.ate <= max(d)
    assert min(d) <= eff.att <= max(d)
    assert sum(r["n"] for r in eff.strata) == 2000


def test_effects_shuffle_invariant():
    s = g.confounded_study(n=1000, seed=8)
    e = cc.fit_propensity(s).scores(s.X)
    perm = np.random.default_rng(0).permutation(1000)
    for est in ("ipw", "stratified"):
        a = cc.estimate_effects(s, e, est)
        b = cc.estimate_effects(s.subset(perm), e[perm], est)
        assert a.ate == pytest.approx(b.ate, abs=1e-10)
        assert a.att == pytest.approx(b.att, abs=1e-10)


def test_effects_errors():
    s = g.confounded_study(n=20, seed=0)
    with pytest.raises(InputError):
        cc.estimate_effects(s, np.full(20, 0.5), "matching")
    with pytest.raises(InputError):
        cc.estimate_effects(s, np.full(20, 1.0))
    with pytest.raises(InputError):
        cc.estimate_effects(make_study(np.zeros(3), [0, 0, 0], np.ones((3, 1))), np.full(3, 0.5))


# --- response curves and budget ----------------------------------------------

def test_fit_noiseless_curve():
    s = np.linspace(0, 500, 12)
    c = cc.fit_response_curve(s, cc.ResponseCurve(100.0, 0.01).users(s))
    assert c.cap == pytest.approx(100.0, rel=0.01)
    assert c.rate == pytest.approx(0.01, rel=0.01)
    assert c.users(0.0) == 0.0
    assert c.saturation_observed


def test_fit_linear_flags_no_saturation():
    s = np.linspace(0, 100, 10)
    c = cc.fit_response_curve(s, 3.0 * s)
    assert not c.saturation_observed
    assert c.cap > 10 * 300


def test_fit_curve_errors():
    with pytest.raises(InputError, match="degenerate"):
        cc.fit_response_curve([0, 1, 2], [5, 5, 5])
    with pytest.raises(InputError):
        cc.fit_response_curve([1, 1, 2], [1, 2, 3])
    with pytest.raises(InputError):
        cc.ResponseCurve(-1.0, 0.1)


def test_symmetric_split():
    c = cc.ResponseCurve(1000.0, 0.002)
    a = cc.allocate_budget([c, c], 1000.0)
    assert a.spend[0] / 1000.0 == pytest.approx(0.5, abs=0.01)
    assert a.spend.sum() == pytest.approx(1000.0)


def test_zero_capacity_channel():
    c = cc.ResponseCurve(1000.0, 0.002)
    a = cc.allocate_budget([c, c], 500.0, capacities=[0.0, np.inf])
    assert a.spend.tolist() == [0.0, 500.0]
    with pytest.raises(InputError, match="zero"):
        cc.allocate_budget([c, c], 500.0, capacities=[0.0, 0.0])
    with pytest.raises(InputError):
        cc.allocate_budget([c], 0.0)


def test_capacity_leaves_money_unspent():
    c = cc.ResponseCurve(1000.0, 0.01)
    a = cc.allocate_budget([c], 1000.0, capacities=[100.0])
    assert a.users[0] == pytest.approx(100.0, rel=1e-3)
    assert a.unspent > 0


def test_grid_oracle_sanity():
    # one useless channel: the oracle must put nothing there
    cap = np.array([100.0, 100.0, 1e-9])
    rate = np.array([0.01, 0.01, 0.01])
    best = grid_oracle(cap, rate, np.full(3, np.inf), 200.0)
    assert best == pytest.approx(2 * 100 * -np.expm1(-1.0), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_greedy_within_one_percent_of_grid(seed):
    cap, rate, capacity, total = g.budget_problem(seed)
    curves = [cc.ResponseCurve(a, b) for a, b in zip(cap, rate)]
    alloc = cc.allocate_budget(curves, total, capacity)
    best = grid_oracle(cap, rate, capacity, total)
    assert alloc.total_users >= 0.99 * best


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_allocation_budget_and_capacity_property(seed):
    cap, rate, capacity, total = g.budget_problem(seed)
    alloc = cc.allocate_budget([cc.ResponseCurve(a, b) for a, b in zip(cap, rate)], total,
                               capacity, n_steps=500)
    assert alloc.spend.sum() + alloc.unspent == pytest.approx(total)
    assert np.all(alloc.users <= capacity + 1e-9)
    assert np.all(alloc.spend >= 0)


def test_marginal_is_derivative():
    c = cc.ResponseCurve(250.0, 0.003)
    for s in np.linspace(0, 2000, 7):
        h = 1e-4
        fd = (c.users(s + h) - c.users(s - h)) / (2 * h) if s > 0 else (c.users(h) - c.users(0)) / h
        assert c.marginal(s) == pytest.approx(fd, rel=1e-5)
