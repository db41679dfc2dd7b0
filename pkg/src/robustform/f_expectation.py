"""Sublinear conditional expectation on the reference tree.

The upper expectation over a rectangular family is computed level by level:
``V(node) = max_kappa sum_c kappa(c) V(c)``. Rectangularity is what makes
this greedy recursion equal to the supremum over whole priors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .lattice import AmbiguitySet, PriorSelection, ScenarioTree


@dataclass(frozen=True)
class ValueField:
    """Node values for levels ``start..K``; ``levels[j]`` belongs to time index ``start + j``."""

    levels: tuple[np.ndarray, ...]
    start: int = 0

    def at(self, k: int) -> np.ndarray:
        if not self.start <= k < self.start + len(self.levels):
            raise IndexError(f"time index {k} outside [{self.start}, {self.start + len(self.levels) - 1}]")
        return self.levels[k - self.start]

    @property
    def root(self) -> float:
        return float(self.at(self.start)[0]) if len(self.at(self.start)) == 1 else float("nan")


def _check_claim(tree: ScenarioTree, claim, k: int | None = None) -> np.ndarray:
    k = tree.K if k is None else k
    x = np.asarray(claim, dtype=float)
    if x.shape != (tree.sizes[k],):
        raise ValueError(f"claim at level {k} needs {tree.sizes[k]} values, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("claim contains non-finite values")
    return x


def backward(
    tree: ScenarioTree,
    ambiguity: AmbiguitySet,
    values: np.ndarray,
    t_from: int,
    t_to: int = 0,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Sup-recursion from a slice at level ``t_from`` down to ``t_to``.

    Returns value slices for levels ``t_to..t_from`` and argmax indices for
    levels ``t_to..t_from - 1``.
    """
    vals = [np.asarray(values, dtype=float)]
    args: list[np.ndarray] = []
    for k in range(t_from - 1, t_to - 1, -1):
        best, arg = _backend.sup_step(vals[-1], tree.children(k), ambiguity.stacks[k])
        vals.append(best)
        args.append(arg)
    return vals[::-1], args[::-1]


def sublinear_expectation(tree: ScenarioTree, ambiguity: AmbiguitySet, claim) -> ValueField:
    x = _check_claim(tree, claim)
    vals, _ = backward(tree, ambiguity, x, tree.K)
    return ValueField(tuple(vals))


def conditional_under_prior(tree: ScenarioTree, selection: PriorSelection, claim) -> ValueField:
    """Classical backward conditional expectation under a single prior."""
    x = _check_claim(tree, claim)
    vals = [x]
    for k in range(tree.K - 1, -1, -1):
        vals.append(_backend.expect_step(vals[-1], tree.children(k), selection.kernels[k]))
    return ValueField(tuple(vals[::-1]))


def maximizing_selection(tree: ScenarioTree, ambiguity: AmbiguitySet, claim) -> PriorSelection:
    """Greedy argmax kernel per node; ties go to the lowest kernel index."""
    x = _check_claim(tree, claim)
    _, args = backward(tree, ambiguity, x, tree.K)
    return PriorSelection.from_indices(ambiguity, args)


def check_tower(tree: ScenarioTree, ambiguity: AmbiguitySet, claim, s: int, t: int) -> float:
    """Max over time-``s`` nodes of ``|E_s(E_t(X)) - E_s(X)|``."""
    if not 0 <= s <= t <= tree.K:
        raise ValueError(f"need 0 <= s <= t <= K, got s={s}, t={t}")
    full = sublinear_expectation(tree, ambiguity, claim)
    inner = np.array(full.at(t))  # fresh claim, detached from the field
    nested, _ = backward(tree, ambiguity, inner, t, s)
    return float(np.max(np.abs(nested[0] - full.at(s))))


def expectation_at(tree: ScenarioTree, ambiguity: AmbiguitySet, leaf_values, t: int) -> np.ndarray:
    """Time-``t`` slice of the sublinear expectation of a leaf field."""
    vals, _ = backward(tree, ambiguity, _check_claim(tree, leaf_values), tree.K, t)
    return vals[0]


def expectation_many(
    tree: ScenarioTree, ambiguity: AmbiguitySet, leaf_fields: Sequence[np.ndarray], t: int
) -> list[np.ndarray]:
    return [expectation_at(tree, ambiguity, f, t) for f in leaf_fields]
