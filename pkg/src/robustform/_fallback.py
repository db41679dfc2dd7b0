"""Pure numpy versions of the recursion kernels.

These define the reference semantics; ``_kernels.pyx`` mirrors them loop by loop.
"""

from __future__ import annotations

import numpy as np

SUP_TIE_REL = 2e-15
MINIMAX_TIE_REL = 1e-13


def sup_step(v_next: np.ndarray, child: np.ndarray, kernels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One backward step of ``max_j sum_d kernels[i, j, d] * v_next[child[i, d]]``.

    Returns the maximal values and the lowest kernel index whose value lies
    within a relative ``2e-15`` of the maximum.
    """
    gathered = v_next[child][:, None, :] * kernels
    vals = gathered.sum(axis=-1)
    best = vals.max(axis=1)
    scale = np.maximum(1.0, np.abs(gathered).sum(axis=-1).max(axis=1))
    within = vals >= (best - SUP_TIE_REL * scale)[:, None]
    return best, within.argmax(axis=1).astype(np.int64)


def expect_step(v_next: np.ndarray, child: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return (weights * v_next[child]).sum(axis=-1)


def minimax_step(
    v_next: np.ndarray,
    v_now: np.ndarray,
    s_next: np.ndarray,
    s_now: np.ndarray,
    child: np.ndarray,
    support: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Per node, the scalar hedge minimising ``max_d (a_d - delta * s_d)``.

    ``a_d`` is the value increment and ``s_d`` the asset increment to the
    ``d``-th supported successor. Candidates are zero and every pairwise
    crossing; among candidates within tolerance of the optimum the one with
    the smallest ``|delta|`` wins (then the smaller ``delta``).
    """
    n, deg = child.shape
    support = support.astype(bool)
    a = v_next[child] - v_now[:, None]
    s = s_next[child] - s_now[:, None]
    # unsupported successors must not bind; push them to -inf
    a_masked = np.where(support, a, -np.inf)
    s_masked = np.where(support, s, 0.0)

    p_idx, q_idx = np.triu_indices(deg, k=1)
    ap, aq = a[:, p_idx], a[:, q_idx]
    sp, sq = s[:, p_idx], s[:, q_idx]
    valid = support[:, p_idx] & support[:, q_idx] & (sp != sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = np.where(valid, (ap - aq) / np.where(valid, sp - sq, 1.0), 0.0)
    cand = np.concatenate([np.zeros((n, 1)), cand], axis=1)
    valid = np.concatenate([np.ones((n, 1), dtype=bool), valid], axis=1)

    obj = (a_masked[:, None, :] - cand[:, :, None] * s_masked[:, None, :]).max(axis=-1)
    obj = np.where(valid, obj, np.inf)
    best_val = obj.min(axis=1)

    scale = np.maximum(1.0, np.where(support, np.abs(a), 0.0).max(axis=1, initial=0.0))
    ok = valid & (obj <= (best_val + MINIMAX_TIE_REL * scale)[:, None])
    # lexicographic (|delta|, delta) among admissible candidates
    key_abs = np.where(ok, np.abs(cand), np.inf)
    min_abs = key_abs.min(axis=1)
    tie = ok & (key_abs == min_abs[:, None])
    delta = np.where(tie, cand, np.inf).min(axis=1)

    resid = (a_masked - delta[:, None] * s_masked).max(axis=1)
    empty = ~support.any(axis=1)
    delta[empty] = 0.0
    resid[empty] = 0.0
    return delta, resid
