from __future__ import annotations

import math

import numpy as np
import pytest

from robustform.default_model import (
    DefaultModel,
    bucket_table,
    bucket_weights,
    build_hazard,
    extend_tree,
    path_hazard,
    sample_default,
    sample_defaults,
    verify_hazard_aggregation,
)
from robustform.lattice import AmbiguitySet, FiniteKernels, IntensityRule, MartingalePolytope, TreeConfig, build_tree


def tree_with(mu, steps=2, factors=(1.1, 0.9)):
    rule = mu if isinstance(mu, IntensityRule) else IntensityRule("constant", mu)
    return build_tree(TreeConfig.uniform(float(steps), steps, 100.0, factors, rule))


def test_zero_intensity():
    tree = tree_with(0.0)
    hz = build_hazard(tree)
    assert all(np.all(v == 0) for v in hz.levels)
    law = bucket_weights(0, hz)
    assert np.all(law.weights == 0) and law.survival == 1.0


def test_constant_hazard_and_weights():
    tree = tree_with(0.1)
    hz = build_hazard(tree)
    np.testing.assert_allclose([hz.at(k)[0] for k in range(3)], [0.0, 0.1, 0.2], atol=1e-15)
    law = bucket_weights(3, hz)
    np.testing.assert_allclose(law.weights, [1 - math.exp(-0.1), math.exp(-0.1) - math.exp(-0.2)], rtol=1e-14)
    assert law.survival == pytest.approx(math.exp(-0.2), rel=1e-15)
    assert law.full.sum() == pytest.approx(1.0, abs=1e-14)


def test_state_dependent_hazard_sums_path():
    tree = tree_with(IntensityRule("affine_log_asset", a=0.5, b=0.1), steps=3)
    hz = build_hazard(tree)
    gp = path_hazard(tree, hz)
    for leaf in range(tree.n_leaves):
        path = tree.path(3, leaf)
        expected = sum(tree.intensity[k][path[k]] * tree.grid.dt[k] for k in range(3))
        assert gp[3, leaf] == pytest.approx(expected, rel=1e-14)
    np.testing.assert_allclose(bucket_table(tree, hz).sum(axis=0), 1.0, atol=1e-14)
    np.testing.assert_allclose(bucket_table(tree, hz, 2)[:2], 0.0)


def test_sample_default():
    hz = build_hazard(tree_with(0.1))
    assert sample_default(0, hz, 0.0) == 2
    assert sample_default(0, hz, 0.92) == 0
    assert sample_default(0, hz, 0.85) == 1
    assert sample_default(0, hz, 1 - 1e-12) == 0
    with pytest.raises(ValueError):
        sample_default(0, hz, 1.0)
    xi = np.array([0.0, 0.92, 0.85, 0.5])
    np.testing.assert_array_equal(sample_defaults(hz, np.zeros(4, dtype=int), xi), [2, 0, 1, 2])


def test_hazard_aggregation():
    tree = tree_with(IntensityRule("affine_log_asset", a=0.5, b=0.1), steps=3, factors=(1.2, 1.0, 0.8))
    amb = AmbiguitySet.build(tree, MartingalePolytope())
    assert verify_hazard_aggregation(tree, amb, build_hazard(tree)) <= 1e-12
    tree0 = tree_with(0.0)
    assert verify_hazard_aggregation(tree0, AmbiguitySet.build(tree0, FiniteKernels([[0.5, 0.5]])), build_hazard(tree0)) == 0.0


def test_extend_tree_one_step():
    tree = tree_with(0.1, steps=1)
    gt = extend_tree(tree, build_hazard(tree))
    assert gt.size(0) == 1 and gt.size(1) == 4
    child, mass = gt.transitions(0, np.array([[0.3, 0.7]]))
    np.testing.assert_array_equal(child[0], [0, 1, 2, 3])
    q = math.exp(-0.1)
    np.testing.assert_allclose(mass[0], [0.3 * q, 0.7 * q, 0.3 * (1 - q), 0.7 * (1 - q)], rtol=1e-14)


def test_extend_tree_absorbing():
    tree = tree_with(0.1, steps=3)
    gt = extend_tree(tree, build_hazard(tree))
    child, mass = gt.transitions(2, np.tile([0.5, 0.5], (4, 1)))
    status_next = gt.status(3)
    for g in range(gt.size(2)):
        st, _ = gt.split(2, g)
        if st > 0:
            live = child[g][mass[g] > 0]
            assert np.all(status_next[live] == st)
            assert mass[g].sum() == pytest.approx(1.0)


def test_zero_intensity_extended_tree_has_no_default_mass():
    tree = tree_with(0.0, steps=2)
    gt = extend_tree(tree, build_hazard(tree))
    _, mass = gt.transitions(0, np.array([[0.5, 0.5]]))
    assert np.all(mass[0, 2:] == 0)


def test_model_weights():
    model = DefaultModel.build(tree_with(0.1))
    np.testing.assert_allclose(model.weights(0).sum(axis=0), 1.0)
