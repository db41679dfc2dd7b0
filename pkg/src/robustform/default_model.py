"""Default time from an intensity: hazard, bucket law, sampling, extended tree.

The default time is ``inf{t : exp(-Gamma_t) <= xi}`` with ``xi`` uniform and
independent of the tree. On the grid it lands in bucket ``(t_k, t_{k+1}]``
with probability ``exp(-Gamma_k) - exp(-Gamma_{k+1})`` or survives past
``t_K`` with probability ``exp(-Gamma_K)``. Bucket index ``K`` stands for
survival throughout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .f_expectation import conditional_under_prior
from .lattice import AmbiguitySet, PriorSelection, ScenarioTree


@dataclass(frozen=True)
class HazardField:
    """Accumulated intensity per node, left-endpoint rule."""

    tree: ScenarioTree
    levels: tuple[np.ndarray, ...]

    def at(self, k: int) -> np.ndarray:
        return self.levels[k]


def build_hazard(tree: ScenarioTree) -> HazardField:
    gamma = [np.zeros(1)]
    dt = tree.grid.dt
    for k in range(tree.K):
        if np.any(tree.intensity[k] < 0):
            raise ValueError(f"negative intensity at level {k}")
        inc = tree.intensity[k] * dt[k]
        gamma.append(np.repeat(gamma[-1] + inc, tree.branching[k]))
    return HazardField(tree, tuple(gamma))


def path_hazard(tree: ScenarioTree, hazard: HazardField) -> np.ndarray:
    """``(K + 1, N_K)``: Gamma at each grid time along every leaf's path."""
    return np.stack([hazard.at(k)[tree.ancestors(tree.K, k)] for k in range(tree.K + 1)])


@dataclass(frozen=True)
class BucketLaw:
    weights: np.ndarray  # (K,)
    survival: float

    @property
    def full(self) -> np.ndarray:
        return np.append(self.weights, self.survival)


def _weights_from(gamma_path: np.ndarray, t: int = 0) -> np.ndarray:
    """Bucket weights given survival to ``t``; rows ``t..K-1`` buckets, row ``K`` survival.

    ``gamma_path`` is ``(K + 1, ...)``. Rows below ``t`` are zero.
    """
    K = gamma_path.shape[0] - 1
    out = np.zeros_like(gamma_path, dtype=float)
    rel = gamma_path[t:] - gamma_path[t]
    step = np.diff(gamma_path[t:], axis=0)
    # expm1 keeps tiny default probabilities accurate
    out[t:K] = np.exp(-rel[:-1]) * -np.expm1(-step)
    out[K] = np.exp(-rel[-1])
    return out


def bucket_table(tree: ScenarioTree, hazard: HazardField, t: int = 0) -> np.ndarray:
    """``(K + 1, N_K)`` bucket weights for every leaf, conditional on survival to ``t``."""
    return _weights_from(path_hazard(tree, hazard), t)


def bucket_weights(leaf: int, hazard: HazardField) -> BucketLaw:
    tree = hazard.tree
    gp = np.array([hazard.at(k)[i] for k, i in enumerate(tree.path(tree.K, leaf))])
    w = _weights_from(gp)
    return BucketLaw(weights=w[:-1], survival=float(w[-1]))


def sample_default(leaf: int, hazard: HazardField, xi: float) -> int:
    """Bucket index of the default time, ``K`` when the name survives the horizon."""
    tree = hazard.tree
    if not 0.0 <= xi < 1.0:
        raise ValueError(f"xi must lie in [0, 1), got {xi}")
    path = tree.path(tree.K, leaf)
    for k in range(tree.K):
        if xi >= np.exp(-hazard.at(k + 1)[path[k + 1]]):
            return k
    return tree.K


def sample_defaults(hazard: HazardField, leaves: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Vectorised ``sample_default``."""
    tree = hazard.tree
    thresholds = np.exp(-path_hazard(tree, hazard))[1:, leaves]  # (K, n)
    hit = xi[None, :] >= thresholds
    return np.where(hit.any(axis=0), hit.argmax(axis=0), tree.K)


def _selections(ambiguity: AmbiguitySet, limit: int, rng: np.random.Generator):
    tree = ambiguity.tree
    if ambiguity.selection_count() <= limit:
        choices = [range(ambiguity.kernel_count(k)) for k in range(tree.K) for _ in range(tree.sizes[k])]
        for flat in itertools.product(*choices):
            idx, pos = [], 0
            for k in range(tree.K):
                idx.append(np.array(flat[pos : pos + tree.sizes[k]]))
                pos += tree.sizes[k]
            yield PriorSelection.from_indices(ambiguity, idx)
    else:
        for _ in range(limit):
            idx = [rng.integers(ambiguity.kernel_count(k), size=tree.sizes[k]) for k in range(tree.K)]
            yield PriorSelection.from_indices(ambiguity, idx)


def verify_hazard_aggregation(
    tree: ScenarioTree, ambiguity: AmbiguitySet, hazard: HazardField, limit: int = 64, seed: int = 0
) -> float:
    """Max over priors and nodes of ``|P(no default by t_k | node) - exp(-Gamma_k)|``.

    Priors are enumerated when at most ``limit`` exist, sampled otherwise.
    """
    w = bucket_table(tree, hazard)
    worst = 0.0
    rng = np.random.default_rng(seed)
    for sel in _selections(ambiguity, limit, rng):
        for k in range(tree.K + 1):
            surv = w[k:].sum(axis=0)
            cond = conditional_under_prior(tree, sel, surv).at(k)
            worst = max(worst, float(np.abs(cond - np.exp(-hazard.at(k))).max()))
    return worst


# ---------------------------------------------------------------------------
# extended tree


@dataclass(frozen=True)
class GTree:
    """Reference tree with a default-status coordinate.

    At level ``k`` status ``0`` is alive and status ``j + 1`` means default in
    bucket ``j < k``. The G-node ``(k, s, i)`` has flat index ``s * N_k + i``.
    ``survive[k][i]`` is the one-step survival factor ``exp(-mu dt)`` at F-node
    ``(k, i)`` and ``default[k][i]`` its complement.
    """

    tree: ScenarioTree
    hazard: HazardField
    survive: tuple[np.ndarray, ...]
    default: tuple[np.ndarray, ...]

    def n_status(self, k: int) -> int:
        return k + 1

    def size(self, k: int) -> int:
        return (k + 1) * self.tree.sizes[k]

    def index(self, k: int, status: int, i: int) -> int:
        return status * self.tree.sizes[k] + i

    def split(self, k: int, g: int) -> tuple[int, int]:
        """``(status, F-node)`` of flat G-index ``g``."""
        return divmod(g, self.tree.sizes[k])

    def fnode(self, k: int) -> np.ndarray:
        return np.tile(np.arange(self.tree.sizes[k]), k + 1)

    def status(self, k: int) -> np.ndarray:
        return np.repeat(np.arange(k + 1), self.tree.sizes[k])

    def transitions(self, k: int, kernel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Children and masses of every level-``k`` G-node under one F-kernel per F-node.

        ``kernel`` is ``(N_k, b_k)``. Returns ``child (n_g, 2 b)`` flat indices
        into level ``k + 1`` and ``mass (n_g, 2 b)``. Alive nodes list their
        alive children first, then the just-defaulted ones. Defaulted nodes
        keep their bucket and put zero mass on the padded second half.
        """
        tree = self.tree
        n, b = tree.sizes[k], tree.branching[k]
        n1 = tree.sizes[k + 1]
        kids = tree.children(k)
        q = self.survive[k][:, None]
        d = self.default[k][:, None]
        child = np.empty((self.size(k), 2 * b), dtype=np.int64)
        mass = np.zeros((self.size(k), 2 * b))
        child[:n, :b] = kids
        child[:n, b:] = (k + 1) * n1 + kids
        mass[:n, :b] = kernel * q
        mass[:n, b:] = kernel * d
        for s in range(1, k + 1):
            rows = slice(s * n, (s + 1) * n)
            child[rows, :b] = s * n1 + kids
            child[rows, b:] = s * n1 + kids
            mass[rows, :b] = kernel
        return child, mass


def extend_tree(tree: ScenarioTree, hazard: HazardField) -> GTree:
    dt = tree.grid.dt
    steps = [tree.intensity[k] * dt[k] for k in range(tree.K)]
    return GTree(
        tree=tree,
        hazard=hazard,
        survive=tuple(np.exp(-x) for x in steps),
        default=tuple(-np.expm1(-x) for x in steps),
    )


@dataclass(frozen=True)
class DefaultModel:
    tree: ScenarioTree
    hazard: HazardField
    gtree: GTree

    @classmethod
    def build(cls, tree: ScenarioTree) -> "DefaultModel":
        hazard = build_hazard(tree)
        return cls(tree=tree, hazard=hazard, gtree=extend_tree(tree, hazard))

    @property
    def K(self) -> int:
        return self.tree.K

    def weights(self, t: int = 0) -> np.ndarray:
        return bucket_table(self.tree, self.hazard, t)
