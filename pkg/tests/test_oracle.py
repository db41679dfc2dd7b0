from __future__ import annotations

import numpy as np
import pytest

from robustform.errors import EnumerationLimitError
from robustform.lattice import AmbiguitySet, FiniteKernels, IntensityRule, MartingalePolytope, TreeConfig, build_tree
from robustform.oracle import PriorEnumeration, all_prior_values, brute_expectation, brute_superhedge
from robustform.superhedging import PaymentStream, f_market, global_price


def tree_of(steps, factors=(1.1, 0.9), mu=0.0):
    return build_tree(TreeConfig.uniform(float(steps), steps, 100.0, factors, IntensityRule("constant", mu)))


def test_singleton_is_classical():
    tree = tree_of(2)
    amb = AmbiguitySet.build(tree, FiniteKernels([[0.3, 0.7]]))
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert brute_expectation(tree, amb, x, 0)[0] == pytest.approx(0.09 + 0.42 + 0.63 + 1.96)


def test_up_up_digital_enumeration():
    tree = tree_of(2)
    amb = AmbiguitySet.build(tree, FiniteKernels([[0.4, 0.6], [0.6, 0.4]]))
    x = np.array([1.0, 0.0, 0.0, 0.0])
    assert len(PriorEnumeration.build(amb)) == 8
    vals = all_prior_values(tree, amb, x, 0)
    assert vals.shape == (8, 1)
    assert vals.max() == pytest.approx(0.36)
    assert vals.min() == pytest.approx(0.16)
    assert brute_expectation(tree, amb, x, 0)[0] == pytest.approx(0.36)


def test_enumeration_limit():
    tree = tree_of(4)
    amb = AmbiguitySet.build(tree, FiniteKernels([[0.4, 0.6], [0.5, 0.5], [0.6, 0.4]]))
    with pytest.raises(EnumerationLimitError):
        PriorEnumeration.build(amb, limit=1000)


def test_lp_complete_binomial():
    tree = tree_of(2)
    m = f_market(AmbiguitySet.build(tree, MartingalePolytope()))
    a = PaymentStream.terminal(m, np.maximum(tree.asset[-1] - 100.0, 0.0))
    # 0.25 * 21 + 0.5 * 0 + 0.25 * 0 with a 121/99/81 binomial
    assert brute_superhedge(m, a)[(0, 0)] == pytest.approx(5.25, abs=1e-9)
    assert brute_superhedge(m, PaymentStream.zero(m))[(0, 0)] == pytest.approx(0.0, abs=1e-12)


def test_lp_saturated_trinomial():
    tree = tree_of(3, factors=(1.2, 1.0, 0.8))
    m = f_market(AmbiguitySet.build(tree, MartingalePolytope()))
    a = PaymentStream.terminal(m, np.maximum(tree.asset[-1] - 100.0, 0.0))
    assert brute_superhedge(m, a)[(0, 0)] == pytest.approx(global_price(m, a), abs=1e-9)


def test_lp_depth_limit():
    tree = tree_of(6)
    m = f_market(AmbiguitySet.build(tree, MartingalePolytope()))
    with pytest.raises(EnumerationLimitError):
        brute_superhedge(m, PaymentStream.zero(m))
