"""Finite non-recombining scenario trees and per-node ambiguity sets.

Nodes are addressed as ``(k, i)``: time index ``k`` and position ``i`` within
level ``k``. Branching is uniform within a level, so the children of
``(k, i)`` are ``(k + 1, i * b_k + c)`` for ``c < b_k`` and every node id maps
to exactly one path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InfeasiblePolytopeError

PROB_TOL = 1e-12
MARTINGALE_TOL = 1e-10


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times ``t_0 = 0 < t_1 < ... < t_K`` in years."""

    times: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        if len(t) < 2:
            raise ConfigError("time grid needs at least one step (K >= 1)")
        if t[0] != 0.0:
            raise ConfigError(f"time grid must start at 0, got {t[0]}")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigError("time grid must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        if steps < 1 or horizon <= 0:
            raise ConfigError("uniform grid needs steps >= 1 and horizon > 0")
        return cls(tuple(horizon * k / steps for k in range(steps + 1)))

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(np.asarray(self.times))


@dataclass(frozen=True)
class IntensityRule:
    """How the default intensity ``mu`` (1/year) is attached to nodes.

    kind ``constant``: ``value`` everywhere.
    kind ``table``: ``table[k]`` is a scalar or a list with one value per node of level ``k``.
    kind ``affine_log_asset``: ``a + b * log(S / S_0)``; must stay nonnegative.
    """

    kind: str = "constant"
    value: float = 0.0
    table: tuple | None = None
    a: float = 0.0
    b: float = 0.0


@dataclass(frozen=True)
class TreeConfig:
    grid: TimeGrid
    s0: float
    factors: tuple[tuple[float, ...], ...]
    intensity: IntensityRule = field(default_factory=IntensityRule)

    @classmethod
    def uniform(
        cls,
        horizon: float,
        steps: int,
        s0: float,
        factors: Sequence[float],
        intensity: IntensityRule | None = None,
    ) -> "TreeConfig":
        """Same branch factors at every step."""
        return cls(
            grid=TimeGrid.uniform(horizon, steps),
            s0=s0,
            factors=tuple(tuple(factors) for _ in range(steps)),
            intensity=intensity or IntensityRule(),
        )


@dataclass(frozen=True)
class ScenarioTree:
    grid: TimeGrid
    branching: tuple[int, ...]
    asset: tuple[np.ndarray, ...]
    intensity: tuple[np.ndarray, ...]

    @property
    def K(self) -> int:
        return self.grid.steps

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.asset)

    @property
    def n_nodes(self) -> int:
        return sum(self.sizes)

    @property
    def n_leaves(self) -> int:
        return self.sizes[-1]

    def children(self, k: int) -> np.ndarray:
        """``(N_k, b_k)`` child positions in level ``k + 1``."""
        b = self.branching[k]
        return np.arange(self.sizes[k], dtype=np.int64)[:, None] * b + np.arange(b, dtype=np.int64)

    def parent(self, k: int, i: int) -> int:
        if k == 0:
            raise ValueError("root has no parent")
        return i // self.branching[k - 1]

    def ancestors(self, k_from: int, k_to: int) -> np.ndarray:
        """Position at level ``k_to`` of the ancestor of every node of level ``k_from``."""
        if k_to > k_from:
            raise ValueError("ancestor level must not exceed the node level")
        span = int(np.prod(self.branching[k_to:k_from], dtype=np.int64))
        return np.arange(self.sizes[k_from], dtype=np.int64) // span

    def node_id(self, k: int, i: int) -> int:
        """Global id: breadth-first numbering from the root."""
        return sum(self.sizes[:k]) + i

    def path(self, k: int, i: int) -> list[int]:
        """Positions of the ancestors of ``(k, i)`` at levels ``0..k``."""
        out = [i]
        for j in range(k, 0, -1):
            out.append(out[-1] // self.branching[j - 1])
        return out[::-1]


def _intensity_levels(config: TreeConfig, asset: list[np.ndarray]) -> list[np.ndarray]:
    rule = config.intensity
    if rule.kind == "constant":
        mu = [np.full(len(s), float(rule.value)) for s in asset]
    elif rule.kind == "table":
        if rule.table is None or len(rule.table) < len(asset) - 1:
            raise ConfigError("intensity table needs one entry per non-terminal level")
        mu = []
        for k, s in enumerate(asset):
            entry = rule.table[min(k, len(rule.table) - 1)]
            arr = np.broadcast_to(np.asarray(entry, dtype=float), (len(s),)) if np.ndim(entry) == 0 else np.asarray(entry, dtype=float)
            if arr.shape != (len(s),):
                raise ConfigError(f"intensity table level {k}: expected {len(s)} values, got {arr.shape[0]}")
            mu.append(np.array(arr))
    elif rule.kind == "affine_log_asset":
        mu = [rule.a + rule.b * np.log(s / config.s0) for s in asset]
    else:
        raise ConfigError(f"unknown intensity kind {rule.kind!r}")
    for k, m in enumerate(mu):
        if not np.all(np.isfinite(m)):
            raise ConfigError(f"non-finite intensity at level {k}")
        if np.any(m < 0):
            raise ConfigError(f"negative intensity at level {k} (min {m.min():.6g})")
    return mu


def build_tree(config: TreeConfig) -> ScenarioTree:
    grid = config.grid
    if len(config.factors) != grid.steps:
        raise ConfigError(f"need branch factors for {grid.steps} steps, got {len(config.factors)}")
    if not config.s0 > 0:
        raise ConfigError("initial asset value must be positive")
    branching = []
    asset = [np.array([float(config.s0)])]
    for k, fac in enumerate(config.factors):
        fac = np.asarray(fac, dtype=float)
        if not 2 <= len(fac) <= 4:
            raise ConfigError(f"step {k}: branching {len(fac)} outside [2, 4]")
        if np.any(fac <= 0) or not np.all(np.isfinite(fac)):
            raise ConfigError(f"step {k}: asset factors must be positive")
        branching.append(len(fac))
        asset.append((asset[-1][:, None] * fac[None, :]).ravel())
    mu = _intensity_levels(config, asset)
    return ScenarioTree(
        grid=grid,
        branching=tuple(branching),
        asset=tuple(_frozen(a) for a in asset),
        intensity=tuple(_frozen(m) for m in mu),
    )


# ---------------------------------------------------------------------------
# ambiguity


@dataclass(frozen=True)
class FiniteKernels:
    """Explicit list of transition kernels, one row per kernel."""

    kernels: np.ndarray

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.kernels, dtype=float))
        if k.size == 0:
            raise ConfigError("kernel list is empty")
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            raise ConfigError("kernel entries must be finite and nonnegative")
        if np.any(np.abs(k.sum(axis=1) - 1.0) > PROB_TOL):
            raise ConfigError("every kernel must sum to one")
        object.__setattr__(self, "kernels", _frozen(k))


@dataclass(frozen=True)
class MartingalePolytope:
    """All martingale kernels on the children, optionally boxed: ``lo <= p <= hi``."""

    box: np.ndarray | None = None

    def __post_init__(self):
        if self.box is not None:
            box = np.asarray(self.box, dtype=float)
            if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 0] > box[:, 1]):
                raise ConfigError("box must be a list of [lo, hi] pairs with lo <= hi")
            object.__setattr__(self, "box", _frozen(box))


NodeSet = FiniteKernels | MartingalePolytope


def martingale_vertices(children: Sequence[float], s0: float, box=None, tol: float = 1e-12) -> np.ndarray:
    """Vertices of ``{p >= 0, sum p = 1, sum p_i S_i = S_0, lo <= p <= hi}``.

    A vertex has at most two coordinates strictly inside their bounds (two
    equality constraints), so every support pattern with at most two free
    coordinates is solved and kept if feasible. Rows come back deduplicated
    and in descending lexicographic order.
    """
    s = np.asarray(children, dtype=float)
    b = len(s)
    if box is None:
        lo, hi = np.zeros(b), np.ones(b)
    else:
        box = np.asarray(box, dtype=float)
        if box.shape != (b, 2):
            raise ConfigError(f"box needs {b} [lo, hi] pairs")
        lo, hi = np.clip(box[:, 0], 0.0, 1.0), np.clip(box[:, 1], 0.0, 1.0)
    # scale-free constraint rows: sum p = 1, sum p (S_i / S_0) = 1
    eq = np.vstack([np.ones(b), s / s0])
    rhs = np.array([1.0, 1.0])
    found: list[np.ndarray] = []
    for n_free in range(0, 3):
        for free in itertools.combinations(range(b), n_free):
            fixed = [j for j in range(b) if j not in free]
            choices = [(lo[j], hi[j]) if hi[j] > lo[j] else (lo[j],) for j in fixed]
            for values in itertools.product(*choices):
                p = np.zeros(b)
                p[fixed] = values
                r = rhs - eq[:, fixed] @ np.asarray(values, dtype=float)
                if n_free:
                    sub = eq[:, list(free)]
                    if np.linalg.matrix_rank(sub, tol=1e-12) < n_free:
                        continue
                    sol = np.linalg.lstsq(sub, r, rcond=None)[0]
                    p[list(free)] = sol
                if np.max(np.abs(eq @ p - rhs)) > tol:
                    continue
                if np.any(p < lo - tol) or np.any(p > hi + tol):
                    continue
                p = np.clip(p, lo, hi)
                if not any(np.max(np.abs(p - q)) <= 1e-12 for q in found):
                    found.append(p)
    if not found:
        raise InfeasiblePolytopeError(f"empty martingale polytope for children {s.tolist()} around {s0}")
    out = np.array(sorted(found, key=lambda v: tuple(-v)))
    return out


@dataclass(frozen=True)
class AmbiguitySet:
    """Per-node kernel sets, rectangular by construction.

    ``levels[k]`` is the set used at every node of level ``k``; ``stacks[k]`` is
    the ``(N_k, M_k, b_k)`` array of kernels the recursions maximise over
    (the explicit list, or the polytope vertices of each node).
    """

    tree: ScenarioTree
    levels: tuple[NodeSet, ...]
    stacks: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, tree: ScenarioTree, spec: NodeSet | Sequence[NodeSet]) -> "AmbiguitySet":
        specs = [spec] * tree.K if isinstance(spec, (FiniteKernels, MartingalePolytope)) else list(spec)
        if len(specs) != tree.K:
            raise ConfigError(f"need one ambiguity set per step ({tree.K}), got {len(specs)}")
        stacks = []
        for k, node_set in enumerate(specs):
            b, n = tree.branching[k], tree.sizes[k]
            if isinstance(node_set, FiniteKernels):
                if node_set.kernels.shape[1] != b:
                    raise ConfigError(f"step {k}: kernels have {node_set.kernels.shape[1]} entries, branching is {b}")
                stack = np.broadcast_to(node_set.kernels, (n, *node_set.kernels.shape))
            else:
                stack = _polytope_stack(tree, k, node_set)
            stack = np.ascontiguousarray(stack)
            stack.flags.writeable = False
            stacks.append(stack)
        return cls(tree=tree, levels=tuple(specs), stacks=tuple(stacks))

    @property
    def is_polytope(self) -> bool:
        return all(isinstance(s, MartingalePolytope) for s in self.levels)

    def kernel_count(self, k: int) -> int:
        return self.stacks[k].shape[1]

    def kernels_at(self, k: int, i: int) -> np.ndarray:
        return self.stacks[k][i]

    def selection_count(self) -> int:
        """Number of rectangular prior selections (kernel or vertex per node)."""
        total = 1
        for k in range(self.tree.K):
            total *= self.kernel_count(k) ** self.tree.sizes[k]
        return total

    def is_singleton(self) -> bool:
        return all(
            self.kernel_count(k) == 1 or np.ptp(self.stacks[k], axis=1).max() <= PROB_TOL
            for k in range(self.tree.K)
        )


def _polytope_stack(tree: ScenarioTree, k: int, poly: MartingalePolytope) -> np.ndarray:
    ratios = tree.asset[k + 1].reshape(tree.sizes[k], tree.branching[k]) / tree.asset[k][:, None]
    cache: dict[tuple, np.ndarray] = {}
    per_node = []
    for row in ratios:
        key = tuple(np.round(row, 14))
        if key not in cache:
            cache[key] = martingale_vertices(row, 1.0, poly.box)
        per_node.append(cache[key])
    m = max(v.shape[0] for v in per_node)
    # pad with copies of the first vertex: duplicates change neither max nor argmax
    return np.stack([np.vstack([v, np.repeat(v[:1], m - len(v), axis=0)]) for v in per_node])


def polytope_vertices(node: tuple[int, int], ambiguity: AmbiguitySet) -> list[np.ndarray]:
    """Vertices of the martingale polytope at ``node = (k, i)``."""
    k, i = node
    node_set = ambiguity.levels[k]
    if not isinstance(node_set, MartingalePolytope):
        raise ConfigError(f"level {k} is not a martingale polytope")
    tree = ambiguity.tree
    kids = tree.asset[k + 1][tree.children(k)[i]]
    return list(martingale_vertices(kids, tree.asset[k][i], node_set.box))


@dataclass(frozen=True)
class MartingaleReport:
    max_error: float
    ok: bool


def validate_martingale(tree: ScenarioTree, ambiguity: AmbiguitySet) -> MartingaleReport:
    """Largest ``|sum p_i S_i - S_0|`` over nodes and listed kernels."""
    worst = 0.0
    for k in range(tree.K):
        kids = tree.asset[k + 1][tree.children(k)]
        drift = np.einsum("nmb,nb->nm", ambiguity.stacks[k], kids) - tree.asset[k][:, None]
        worst = max(worst, float(np.abs(drift).max()))
    return MartingaleReport(max_error=worst, ok=worst <= MARTINGALE_TOL)


@dataclass(frozen=True)
class PriorSelection:
    """One kernel per non-terminal node: ``kernels[k]`` has shape ``(N_k, b_k)``."""

    kernels: tuple[np.ndarray, ...]
    index: tuple[np.ndarray, ...] | None = None

    @classmethod
    def from_indices(cls, ambiguity: AmbiguitySet, index: Sequence[np.ndarray]) -> "PriorSelection":
        kernels = []
        idx = []
        for k, stack in enumerate(ambiguity.stacks):
            ix = np.broadcast_to(np.asarray(index[k], dtype=np.int64), (stack.shape[0],))
            kernels.append(stack[np.arange(stack.shape[0]), ix])
            idx.append(np.array(ix))
        return cls(kernels=tuple(kernels), index=tuple(idx))

    def validate(self, ambiguity: AmbiguitySet, tol: float = PROB_TOL) -> None:
        tree = ambiguity.tree
        if len(self.kernels) != tree.K:
            raise ConfigError("selection must cover every non-terminal level")
        for k, chosen in enumerate(self.kernels):
            if chosen.shape != (tree.sizes[k], tree.branching[k]):
                raise ConfigError(f"selection level {k} has shape {chosen.shape}")
            if np.any(chosen < -tol) or np.any(np.abs(chosen.sum(axis=1) - 1) > tol):
                raise ConfigError(f"selection level {k} contains a non-probability vector")
            node_set = ambiguity.levels[k]
            if isinstance(node_set, FiniteKernels):
                dist = np.abs(chosen[:, None, :] - node_set.kernels[None]).max(axis=-1).min(axis=1)
                if np.any(dist > tol):
                    raise ConfigError(f"selection level {k} uses a kernel outside the list")
            else:
                kids = tree.asset[k + 1][tree.children(k)]
                if np.any(np.abs((chosen * kids).sum(axis=1) - tree.asset[k]) > MARTINGALE_TOL * np.maximum(1, tree.asset[k])):
                    raise ConfigError(f"selection level {k} violates the martingale constraint")
                if node_set.box is not None:
                    if np.any(chosen < node_set.box[:, 0] - tol) or np.any(chosen > node_set.box[:, 1] + tol):
                        raise ConfigError(f"selection level {k} leaves the box")
