from __future__ import annotations

import numpy as np
import pytest

from robustform.f_expectation import (
    check_tower,
    conditional_under_prior,
    expectation_at,
    maximizing_selection,
    sublinear_expectation,
)
from robustform.lattice import AmbiguitySet, FiniteKernels, IntensityRule, PriorSelection, TreeConfig, build_tree
from robustform.oracle import brute_expectation


@pytest.fixture
def drift_tree():
    tree = build_tree(TreeConfig.uniform(2.0, 2, 100.0, (1.1, 0.9), IntensityRule("constant", 0.0)))
    amb = AmbiguitySet.build(tree, FiniteKernels([[0.4, 0.6], [0.6, 0.4]]))
    return tree, amb


def test_up_up_digital(drift_tree):
    tree, amb = drift_tree
    x = np.array([1.0, 0.0, 0.0, 0.0])
    v = sublinear_expectation(tree, amb, x)
    assert v.root == pytest.approx(0.36, abs=1e-15)
    assert v.root == pytest.approx(float(brute_expectation(tree, amb, x, 0)[0]), abs=1e-15)
    np.testing.assert_allclose(v.at(1), [0.6, 0.0])


def test_maximizing_selection_picks_up_kernel(drift_tree):
    tree, amb = drift_tree
    sel = maximizing_selection(tree, amb, np.array([1.0, 0.0, 0.0, 0.0]))
    np.testing.assert_allclose(sel.kernels[0][0], [0.6, 0.4])
    np.testing.assert_allclose(sel.kernels[1][0], [0.6, 0.4])


def test_constant_claim_and_first_kernel_tiebreak(drift_tree):
    tree, amb = drift_tree
    v = sublinear_expectation(tree, amb, np.full(4, 3.5))
    for k in range(3):
        np.testing.assert_array_equal(v.at(k), 3.5)
    sel = maximizing_selection(tree, amb, np.full(4, 3.5))
    assert all(np.all(ix == 0) for ix in sel.index)


def test_single_prior_is_linear(drift_tree):
    tree, _ = drift_tree
    amb = AmbiguitySet.build(tree, FiniteKernels([[0.3, 0.7]]))
    x = np.array([4.0, 1.0, 2.0, 8.0])
    expected = 0.09 * 4 + 0.21 * 1 + 0.21 * 2 + 0.49 * 8
    assert sublinear_expectation(tree, amb, x).root == pytest.approx(expected, abs=1e-14)


def test_conditional_under_prior(drift_tree):
    tree, amb = drift_tree
    sel = PriorSelection.from_indices(amb, [np.array([0]), np.array([1, 0])])
    x = np.array([1.0, 2.0, 3.0, 4.0])
    v = conditional_under_prior(tree, sel, x)
    np.testing.assert_allclose(v.at(1), [0.6 * 1 + 0.4 * 2, 0.4 * 3 + 0.6 * 4])
    assert np.all(conditional_under_prior(tree, sel, np.zeros(4)).at(0) == 0)


def test_degenerate_kernel_propagates_claim(drift_tree):
    tree, _ = drift_tree
    amb = AmbiguitySet.build(tree, FiniteKernels([[1.0, 0.0]]))
    x = np.array([5.0, 1.0, 2.0, 3.0])
    assert sublinear_expectation(tree, amb, x).root == 5.0


def test_tower_identity(drift_tree):
    tree, amb = drift_tree
    x = np.array([1.0, -2.0, 0.5, 3.0])
    for t in range(3):
        assert check_tower(tree, amb, x, t, t) == 0.0
        for s in range(t + 1):
            assert check_tower(tree, amb, x, s, t) <= 1e-12


def test_expectation_at_matches_field(drift_tree):
    tree, amb = drift_tree
    x = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_array_equal(expectation_at(tree, amb, x, 1), sublinear_expectation(tree, amb, x).at(1))


def test_wrong_shape(drift_tree):
    tree, amb = drift_tree
    with pytest.raises(ValueError):
        sublinear_expectation(tree, amb, np.ones(3))
