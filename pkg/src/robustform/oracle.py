"""Brute-force references for tiny trees.

Nothing here calls the backward recursions. Expectations enumerate every
rectangular prior selection and push probabilities forward along paths;
superhedging capital is a linear program over all path constraints.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import EnumerationLimitError, NumericalAssertionError
from .lattice import AmbiguitySet, ScenarioTree

MAX_SELECTIONS = 10**6
MAX_LP_DEPTH = 5
CHUNK = 2048


@dataclass(frozen=True)
class PriorEnumeration:
    """All selections as rows of kernel indices, one column per non-terminal node."""

    tree: ScenarioTree
    index: np.ndarray
    offsets: tuple[int, ...]

    @classmethod
    def build(cls, ambiguity: AmbiguitySet, limit: int = MAX_SELECTIONS) -> "PriorEnumeration":
        tree = ambiguity.tree
        counts = [ambiguity.stacks[k].shape[1] for k in range(tree.K) for _ in range(tree.sizes[k])]
        total = 1
        for c in counts:
            total *= c
            if total > limit:
                raise EnumerationLimitError(f"more than {limit} prior selections")
        rows = np.array(list(itertools.product(*[range(c) for c in counts])), dtype=np.int64).reshape(total, len(counts))
        offsets = tuple(np.cumsum([0] + [tree.sizes[k] for k in range(tree.K)]).tolist())
        return cls(tree=tree, index=rows, offsets=offsets)

    def __len__(self) -> int:
        return self.index.shape[0]

    def edge_probs(self, ambiguity: AmbiguitySet, rows: slice) -> list[np.ndarray]:
        """Per level ``k``, ``(n_sel, N_{k+1})`` probability of the edge into each node."""
        out = []
        for k in range(self.tree.K):
            idx = self.index[rows, self.offsets[k] : self.offsets[k + 1]]  # (n_sel, N_k)
            stack = ambiguity.stacks[k]  # (N_k, M, b)
            nodes = np.arange(self.tree.sizes[k])
            chosen = stack[nodes[None, :], idx]  # (n_sel, N_k, b)
            out.append(chosen.reshape(chosen.shape[0], -1))
        return out


def _forward_from(tree: ScenarioTree, edges: list[np.ndarray], t: int) -> np.ndarray:
    """``(n_sel, N_K)``: probability of each leaf given its time-``t`` ancestor."""
    n_sel = edges[0].shape[0] if edges else 1
    p = np.ones((n_sel, tree.sizes[t]))
    for k in range(t, tree.K):
        p = np.repeat(p, tree.branching[k], axis=1) * edges[k]
    return p


def _subtree_sum(tree: ScenarioTree, leaf_vals: np.ndarray, t: int) -> np.ndarray:
    return leaf_vals.reshape(leaf_vals.shape[0], tree.sizes[t], -1).sum(axis=-1)


def _hat_weights(tree: ScenarioTree, t: int) -> np.ndarray:
    """``(K + 1, N_K)`` default law given survival to ``t``, as products of one-step factors."""
    K = tree.K
    # ancestor of each leaf at level k, by integer division
    anc = []
    for k in range(K + 1):
        span = 1
        for b in tree.branching[k:]:
            span *= b
        anc.append(np.arange(tree.n_leaves) // span)
    q = [np.exp(-tree.intensity[k][anc[k]] * tree.grid.dt[k]) for k in range(K)]
    w = np.zeros((K + 1, tree.n_leaves))
    alive = np.ones(tree.n_leaves)
    for k in range(t, K):
        w[k] = alive * (1.0 - q[k])
        alive = alive * q[k]
    w[K] = alive
    return w


def brute_expectation(tree: ScenarioTree, ambiguity: AmbiguitySet, claim, t: int, limit: int = MAX_SELECTIONS):
    """Max over all enumerated priors of the conditional expectation at every time-``t`` node.

    ``claim`` is a leaf array, or a marked table ``(K + 1, N_K)`` (anything with
    a ``phi`` attribute). For a marked claim the result is ``(alive, defaulted)``
    with ``defaulted[j]`` the value for a default in bucket ``j < t``.
    """
    enum = PriorEnumeration.build(ambiguity, limit)
    phi = getattr(claim, "phi", None)
    if phi is None:
        fields = [np.asarray(claim, dtype=float)]
    else:
        w = _hat_weights(tree, t)
        fields = [(np.asarray(phi) * w).sum(axis=0)] + [np.asarray(phi)[j] for j in range(t)]
    best = [np.full(tree.sizes[t], -np.inf) for _ in fields]
    for start in range(0, len(enum), CHUNK):
        edges = enum.edge_probs(ambiguity, slice(start, start + CHUNK))
        p = _forward_from(tree, edges, t)
        for i, f in enumerate(fields):
            vals = _subtree_sum(tree, p * f[None, :], t)
            best[i] = np.maximum(best[i], vals.max(axis=0))
    if phi is None:
        return best[0]
    return best[0], np.array(best[1:]).reshape(t, tree.sizes[t])


def all_prior_values(tree: ScenarioTree, ambiguity: AmbiguitySet, claim, t: int, limit: int = MAX_SELECTIONS) -> np.ndarray:
    """``(n_sel, N_t)`` conditional expectations under every enumerated prior."""
    enum = PriorEnumeration.build(ambiguity, limit)
    x = np.asarray(claim, dtype=float)
    out = []
    for start in range(0, len(enum), CHUNK):
        edges = enum.edge_probs(ambiguity, slice(start, start + CHUNK))
        out.append(_subtree_sum(tree, _forward_from(tree, edges, t) * x[None, :], t))
    return np.vstack(out)


# ---------------------------------------------------------------------------
# superhedging LP


def _subtree_nodes(market, k0: int, g0: int, k1: int) -> list[list[int]]:
    """Supported descendants of ``(k0, g0)`` per level up to ``k1``."""
    levels = [[g0]]
    for k in range(k0, k1):
        nxt = []
        for g in levels[-1]:
            kids = market.child[k][g][market.support[k][g]]
            nxt.extend(sorted(set(int(c) for c in kids)))
        levels.append(nxt)
    return levels


def brute_superhedge(market, stream, sigma: int = 0, tau: int | None = None) -> dict[tuple[int, int], float]:
    """Minimal capital at each reachable time-``sigma`` node to superhedge ``A_k - A_sigma``.

    One LP per ``sigma`` node: minimise ``v`` subject to
    ``v + sum_j delta_j dS_j >= A_k - A_sigma`` at every supported node of the
    subtree up to ``tau`` (each node is one path prefix). Inputs are rescaled
    to unit size before solving.
    """
    K = market.K
    tau = K if tau is None else tau
    if K > MAX_LP_DEPTH:
        raise EnumerationLimitError(f"LP oracle supports depth <= {MAX_LP_DEPTH}, got {K}")
    if not 0 <= sigma <= tau <= K:
        raise ValueError(f"need 0 <= sigma <= tau <= K, got {sigma}, {tau}")
    roots = _subtree_nodes(market, 0, 0, sigma)[-1]
    s_scale = float(market.asset[0][0])
    out = {}
    for g0 in roots:
        levels = _subtree_nodes(market, sigma, g0, tau)
        inner = [(sigma + d, g) for d, lv in enumerate(levels[:-1]) for g in lv]
        col = {node: 1 + i for i, node in enumerate(inner)}
        a0 = stream.levels[sigma][g0]
        req = {(sigma + d, g): stream.levels[sigma + d][g] - a0 for d, lv in enumerate(levels) for g in lv}
        a_scale = max(1.0, max(abs(v) for v in req.values()))
        rows, rhs = [], []
        # gains along each path prefix, built level by level
        prefix = {(sigma, g0): {}}
        for d, lv in enumerate(levels):
            k = sigma + d
            for g in lv:
                coeffs = prefix[(k, g)]
                row = np.zeros(1 + len(inner))
                row[0] = -1.0
                for c, v in coeffs.items():
                    row[c] = -v
                rows.append(row)
                rhs.append(-req[(k, g)] / a_scale)
                if d < len(levels) - 1:
                    kids = set(int(c) for c in market.child[k][g][market.support[k][g]])
                    for c in kids:
                        ds = (market.asset[k + 1][c] - market.asset[k][g]) / s_scale
                        nxt = dict(coeffs)
                        nxt[col[(k, g)]] = ds
                        prefix[(k + 1, c)] = nxt
        cost = np.zeros(1 + len(inner))
        cost[0] = 1.0
        res = linprog(
            cost,
            A_ub=np.array(rows),
            b_ub=np.array(rhs),
            bounds=[(None, None)] * len(cost),
            method="highs",
            options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
        )
        if res.status != 0:
            raise NumericalAssertionError(f"superhedging LP failed at node {g0}: {res.message}")
        out[(sigma, g0)] = float(res.x[0]) * a_scale
    return out
