from __future__ import annotations

import numpy as np
import pytest

from robustform.default_model import DefaultModel
from robustform.errors import ConfigError, DecompositionError
from robustform.lattice import AmbiguitySet, FiniteKernels, IntensityRule, MartingalePolytope, TreeConfig, build_tree
from robustform.oracle import brute_expectation, brute_superhedge
from robustform.products import SurvivalClaim, as_payment_stream, price_survival_claim
from robustform.superhedging import (
    PaymentStream,
    StoppingRule,
    SuperhedgeResult,
    capital_strategy,
    duality_gap,
    extract_strategy,
    f_market,
    g_market,
    global_price,
    local_price,
    robust_envelope,
    superhedge,
    verify_superhedge,
)


def market_for(steps, factors, mu=0.0, box=None):
    tree = build_tree(TreeConfig.uniform(float(steps), steps, 100.0, factors, IntensityRule("constant", mu)))
    amb = AmbiguitySet.build(tree, MartingalePolytope(box))
    return tree, amb, f_market(amb)


def call(tree, strike=100.0):
    return np.maximum(tree.asset[-1] - strike, 0.0)


def test_constant_stream_envelope():
    tree, _, m = market_for(2, (1.2, 1.0, 0.8))
    levels = (np.zeros(1),) + tuple(np.full(m.size(k), 3.0) for k in range(1, 3))
    env = robust_envelope(m, PaymentStream(levels, "const"))
    for v in env.levels:
        np.testing.assert_allclose(v, 3.0, rtol=1e-15)
    assert global_price(m, PaymentStream.zero(m)) == 0.0


def test_binomial_replication():
    tree, _, m = market_for(3, (1.1, 0.9))
    res = superhedge(m, PaymentStream.terminal(m, call(tree)))
    p = 0.5
    closed = sum(p**3 * max(100 * 1.1 ** j * 0.9 ** (3 - j) - 100, 0) * [1, 3, 3, 1][j] for j in range(4))
    assert res.price == pytest.approx(closed, abs=1e-12)
    y = res.envelope
    for k in range(3):
        up, down = y[k + 1][0::2], y[k + 1][1::2]
        su, sd = tree.asset[k + 1][0::2], tree.asset[k + 1][1::2]
        np.testing.assert_allclose(res.delta[k], (up - down) / (su - sd), atol=1e-13)
        np.testing.assert_allclose(res.slack[k + 1], 0.0, atol=1e-12)


def test_flat_asset_needs_no_hedge():
    tree, _, m = market_for(2, (1.0, 1.0))
    res = superhedge(m, PaymentStream.terminal(m, np.full(4, 2.5)))
    assert res.price == 2.5
    assert all(np.all(d == 0) for d in res.delta)
    assert all(np.all(s == 0) for s in res.slack)


def test_trinomial_call_slack():
    tree, _, m = market_for(1, (1.2, 1.0, 0.8))
    res = superhedge(m, PaymentStream.terminal(m, call(tree)))
    assert res.price == pytest.approx(10.0)
    assert res.delta[0][0] == pytest.approx(0.5)
    np.testing.assert_allclose(res.slack[1][[0, 2]], 0.0, atol=1e-13)
    assert res.slack[1][1] < -1.0


def test_verify_detects_underfunding_and_trivial_superhedge():
    tree, _, m = market_for(3, (1.2, 1.0, 0.8))
    a = PaymentStream.terminal(m, call(tree))
    res = superhedge(m, a)
    rules = [StoppingRule.barrier(tree, 110.0, "up"), StoppingRule.barrier(tree, 90.0, "down", 1)]
    assert verify_superhedge(m, a, res, rules).worst_violation >= -1e-12
    short = SuperhedgeResult(price=0.99 * res.price, delta=res.delta)
    assert verify_superhedge(m, a, short, rules).worst_violation < 0
    naive = SuperhedgeResult(price=float(call(tree).max()), delta=tuple(np.zeros(m.size(k)) for k in range(3)))
    rep = verify_superhedge(m, a, naive, rules)
    assert rep.worst_violation >= 0 and rep.ok
    assert "worst_violation=" in rep.render()


def test_scaling_homogeneity():
    tree, _, m = market_for(3, (1.25, 1.0, 0.85))
    a = PaymentStream.terminal(m, call(tree, 95.0))
    r1, r3 = superhedge(m, a), superhedge(m, a.scale(3.0))
    assert r3.price == pytest.approx(3 * r1.price, rel=1e-14)
    for d1, d3 in zip(r1.delta, r3.delta):
        np.testing.assert_allclose(d3, 3 * d1, rtol=1e-12, atol=1e-13)


def test_local_price():
    tree, amb, m = market_for(2, (1.2, 1.0, 0.8))
    x = call(tree)
    a = PaymentStream.terminal(m, x)
    d0, d1, d2 = (StoppingRule.deterministic(tree, k) for k in range(3))
    assert all(v == 0 for v in local_price(m, a, d1, d1).values())
    assert local_price(m, a, d0, d2)[(0, 0)] == pytest.approx(global_price(m, a))
    lp = local_price(m, a, d1, d2)
    np.testing.assert_allclose([lp[(1, i)] for i in range(3)], brute_expectation(tree, amb, x, 1), atol=1e-12)
    with pytest.raises(ValueError):
        local_price(m, a, d2, d1)


def test_envelope_matches_lp_oracle():
    tree, _, m = market_for(3, (1.3, 1.05, 0.8))
    rng = np.random.default_rng(7)
    levels = [np.zeros(1)]
    for k in range(3):
        levels.append(levels[-1][m.parent[k + 1]] + rng.uniform(0, 2, size=m.size(k + 1)))
    a = PaymentStream(tuple(levels), "random")
    env = robust_envelope(m, a)
    for sigma in range(4):
        for (k, g), cap in brute_superhedge(m, a, sigma).items():
            assert cap == pytest.approx(env.levels[k][g] - a.levels[k][g], abs=1e-9)


def test_barrier_stopping():
    tree, _, m = market_for(2, (1.1, 0.9))
    rule = StoppingRule.barrier(tree, 105.0, "up")
    hits = rule.first_hit(m)
    assert not hits[0][0]
    assert hits[1].tolist() == [True, False]
    # paths that never touch the barrier stop at the horizon
    assert hits[2].tolist() == [False, False, True, True]
    tau = robust_envelope(m, PaymentStream.terminal(m, call(tree)), rule)
    assert tau.levels[1][0] == 0.0


def test_box_breaks_saturation():
    tree, _, m = market_for(1, (1.2, 1.0, 0.8), box=[[0.1, 1.0], [0.0, 1.0], [0.1, 1.0]])
    tent = 20.0 - np.abs(tree.asset[-1] - 100.0)
    a = PaymentStream.terminal(m, tent)
    assert global_price(m, a) == pytest.approx(16.0)
    with pytest.raises(DecompositionError):
        superhedge(m, a)
    res = capital_strategy(m, a)
    assert res.price == pytest.approx(20.0)
    assert verify_superhedge(m, a, res).worst_violation >= -1e-12


def test_g_market_modes():
    tree = build_tree(TreeConfig.uniform(2.0, 2, 100.0, (1.2, 1.0, 0.8), IntensityRule("constant", 0.1)))
    amb = AmbiguitySet.build(tree, MartingalePolytope())
    model = DefaultModel.build(tree)
    stream = as_payment_stream(model, SurvivalClaim(np.ones(9)))
    d0, d2 = StoppingRule.deterministic(tree, 0), StoppingRule.deterministic(tree, 2)
    sat = duality_gap(g_market(model, amb, "saturated"), stream, d0, d2)
    assert sat.mode == "duality" and sat.gap <= 1e-9
    prod = duality_gap(g_market(model, amb, "product"), stream, d0, d2)
    assert prod.mode == "weak-duality"
    assert prod.weak_violation >= -1e-12
    assert prod.capital[(0, 0)] == pytest.approx(1.0)
    assert prod.price[(0, 0)] == pytest.approx(np.exp(-0.2))
    boxed = AmbiguitySet.build(tree, MartingalePolytope([[0.1, 1.0], [0.0, 1.0], [0.1, 1.0]]))
    with pytest.raises(ConfigError):
        g_market(model, boxed, "saturated")
    with pytest.raises(ConfigError):
        g_market(model, AmbiguitySet.build(tree, FiniteKernels([[0.25, 0.5, 0.25]])), "product")


def test_single_prior_survival_stream_matches_products():
    tree = build_tree(TreeConfig.uniform(3.0, 3, 100.0, (1.1, 0.9), IntensityRule("affine_log_asset", a=0.5, b=0.1)))
    amb = AmbiguitySet.build(tree, MartingalePolytope())
    model = DefaultModel.build(tree)
    y = SurvivalClaim(call(tree))
    gp = g_market(model, amb, "product")
    assert global_price(gp, as_payment_stream(model, y)) == pytest.approx(
        price_survival_claim(model, amb, y, 0).alive[0], abs=1e-13
    )


def test_complete_binomial_duality_gap():
    tree, _, m = market_for(3, (1.1, 0.9))
    a = PaymentStream.terminal(m, call(tree))
    rep = duality_gap(m, a, StoppingRule.deterministic(tree, 0), StoppingRule.deterministic(tree, 3))
    assert rep.gap <= 1e-12


def test_decreasing_stream_rejected():
    tree, _, m = market_for(1, (1.1, 0.9))
    with pytest.raises(ValueError):
        superhedge(m, PaymentStream((np.ones(1), np.zeros(2)), "bad"))


def test_extract_strategy_on_envelope_matches_superhedge():
    tree, _, m = market_for(2, (1.2, 1.0, 0.8))
    a = PaymentStream.terminal(m, call(tree))
    assert extract_strategy(m, robust_envelope(m, a)).price == superhedge(m, a).price
