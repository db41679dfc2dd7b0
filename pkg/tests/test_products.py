from __future__ import annotations

import math

import numpy as np
import pytest

from robustform.default_model import DefaultModel
from robustform.f_expectation import expectation_at
from robustform.lattice import AmbiguitySet, FiniteKernels, IntensityRule, MartingalePolytope, TreeConfig, build_tree
from robustform.oracle import brute_expectation
from robustform.products import (
    AnnuityProcess,
    CreditProduct,
    RecoveryProcess,
    SurvivalClaim,
    as_payment_stream,
    marked_annuity,
    marked_recovery,
    marked_survival,
    price_annuity,
    price_recovery,
    price_survival_claim,
    tower_check_products,
)


def setup(mu, steps=3, factors=(1.1, 0.9), spec=None, horizon=None):
    rule = mu if isinstance(mu, IntensityRule) else IntensityRule("constant", mu)
    tree = build_tree(TreeConfig.uniform(float(horizon or steps), steps, 100.0, factors, rule))
    amb = AmbiguitySet.build(tree, spec or FiniteKernels([[0.5, 0.5]]))
    return tree, amb, DefaultModel.build(tree)


def test_survival_bond():
    tree, amb, model = setup(0.05, steps=4, horizon=2.0)
    price = price_survival_claim(model, amb, SurvivalClaim(np.ones(16)), 0)
    assert price.alive[0] == pytest.approx(math.exp(-0.1), rel=1e-15)


def test_zero_intensity_survival_is_f_expectation():
    tree, amb, model = setup(0.0, spec=FiniteKernels([[0.4, 0.6], [0.6, 0.4]]))
    y = np.maximum(tree.asset[-1] - 100, 0)
    for t in range(4):
        np.testing.assert_allclose(price_survival_claim(model, amb, SurvivalClaim(y), t).alive, expectation_at(tree, amb, y, t))


def test_recovery_closed_forms():
    tree, amb, model = setup(0.2)
    ones = RecoveryProcess.build(tree, [1.0] * 4)
    assert price_recovery(model, amb, ones, 0, 3).alive[0] == pytest.approx(1 - math.exp(-0.6), rel=1e-14)
    zero = RecoveryProcess.build(tree, [0.0] * 4)
    assert price_recovery(model, amb, zero, 0, 3).max_abs() == 0.0


def test_recovery_matches_oracle_under_ambiguity():
    tree, _, model = setup(IntensityRule("affine_log_asset", a=0.6, b=0.2))
    amb = AmbiguitySet.build(tree, FiniteKernels([[0.4, 0.6], [0.6, 0.4]]))
    z = RecoveryProcess.build(tree, [tree.asset[k] / 100 for k in range(4)])
    for s in range(3):
        p = price_recovery(model, amb, z, s, 3)
        alive, _ = brute_expectation(tree, amb, marked_recovery(model, z, s, 3), s)
        np.testing.assert_allclose(p.alive, alive, atol=1e-12)


def test_annuity_closed_form():
    mu, rate = 0.15, 0.03
    tree, amb, model = setup(mu)
    a = AnnuityProcess.build(tree, [rate * k for k in range(4)])
    price = price_annuity(model, amb, a, 0, 3).alive[0]
    # coupon increments rate paid at t_k while alive at t_k
    closed = sum(rate * math.exp(-mu * k) for k in range(1, 4))
    assert price == pytest.approx(closed, rel=1e-14)
    alive, _ = brute_expectation(tree, amb, marked_annuity(model, a, 0, 3), 0)
    assert price == pytest.approx(float(alive[0]), rel=1e-14)


def test_annuity_degenerate_cases():
    tree, amb, model = setup(0.0, spec=FiniteKernels([[0.4, 0.6], [0.6, 0.4]]))
    c = [np.zeros(1)] + [tree.asset[k] / 100 + k for k in range(1, 4)]
    a = AnnuityProcess.build(tree, c)
    np.testing.assert_allclose(price_annuity(model, amb, a, 1, 3).alive, expectation_at(tree, amb, np.asarray(c[3]), 1))
    zero = AnnuityProcess.build(tree, [0.0] * 4)
    assert price_annuity(model, amb, zero, 0, 3).max_abs() == 0.0
    with pytest.raises(ValueError):
        AnnuityProcess.build(tree, [0.0, 1.0, 0.5, 2.0])
    with pytest.raises(ValueError):
        AnnuityProcess.build(tree, [1.0, 1.0, 1.0, 1.0])


@pytest.mark.parametrize("legs", ["survival", "recovery", "both"])
def test_product_tower(legs):
    tree, amb, model = setup(IntensityRule("affine_log_asset", a=0.6, b=0.2), factors=(1.2, 1.0, 0.8), spec=MartingalePolytope())
    rng = np.random.default_rng(5)
    y = SurvivalClaim(rng.uniform(size=27)) if legs != "recovery" else None
    z = RecoveryProcess.build(tree, [rng.uniform(size=n) for n in tree.sizes]) if legs != "survival" else None
    p = CreditProduct(recovery=z, survival=y)
    for t in range(4):
        for s in range(t + 1):
            assert tower_check_products(model, amb, p, s, t) <= 1e-12


def test_payment_streams():
    tree, _, model = setup(0.1, steps=2)
    gt = model.gtree
    y = SurvivalClaim(np.arange(4.0))
    a = as_payment_stream(model, y)
    assert np.all(a.levels[0] == 0) and np.all(a.levels[1] == 0)
    np.testing.assert_array_equal(a.levels[2][gt.status(2) == 0], np.arange(4.0))
    z = RecoveryProcess.build(tree, [np.array([1.0]), np.array([2.0, 3.0]), np.array([4.0, 5.0, 6.0, 7.0])])
    r = as_payment_stream(model, z)
    # default in bucket 1: A jumps to Z at t_1 and stays there
    g1 = gt.index(2, 2, 3)
    np.testing.assert_allclose(r.levels[2][g1], 3.0)
    assert r.levels[1][gt.index(1, 0, 1)] == 0.0
    c = AnnuityProcess.build(tree, [np.zeros(1), np.array([1.0, 1.0]), np.array([2.0, 2.5, 1.5, 3.0])])
    s = as_payment_stream(model, c)
    np.testing.assert_array_equal(s.levels[2][gt.status(2) == 0], [2.0, 2.5, 1.5, 3.0])


def test_marked_survival_shape():
    tree, _, model = setup(0.1)
    m = marked_survival(model, SurvivalClaim(np.ones(8)))
    assert m.phi.shape == (4, 8)
    np.testing.assert_array_equal(m.phi[:3], 0.0)
