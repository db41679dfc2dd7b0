"""Defaultable contracts: survival claim, recovery, annuity.

Payments are stepwise: a recovery or annuity amount due for a default in
bucket ``(t_k, t_{k+1}]`` is read at the bucket's left-endpoint node. The
pricing functions below evaluate the closed reduced-form expressions directly
from the intensity; ``marked`` turns each contract into the equivalent marked
claim so both routes can be compared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .default_model import DefaultModel
from .f_expectation import expectation_at
from .g_expectation import GValueField, MarkedClaim, weak_tower_gap
from .lattice import AmbiguitySet, ScenarioTree
from .superhedging import PaymentStream

MONO_TOL = 1e-12


def _node_field(tree: ScenarioTree, levels, name: str) -> tuple[np.ndarray, ...]:
    if len(levels) != tree.K + 1:
        raise ValueError(f"{name} needs one array per time index (K + 1 = {tree.K + 1})")
    out = []
    for k, z in enumerate(levels):
        z = np.broadcast_to(np.asarray(z, dtype=float), (tree.sizes[k],)).copy()
        if not np.all(np.isfinite(z)):
            raise ValueError(f"{name} level {k} has non-finite values")
        out.append(z)
    return tuple(out)


@dataclass(frozen=True)
class SurvivalClaim:
    """Pays ``Y`` at ``t_K`` if no default occurred."""

    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise ValueError("survival payoff must be finite and nonnegative")
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class RecoveryProcess:
    """Node field ``Z``; a default in bucket ``k`` pays ``Z`` at the time-``t_k`` node."""

    z: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, tree: ScenarioTree, levels) -> "RecoveryProcess":
        z = _node_field(tree, levels, "recovery")
        if any(np.any(v < 0) for v in z):
            raise ValueError("recovery must be nonnegative")
        return cls(z)


@dataclass(frozen=True)
class AnnuityProcess:
    """Cumulative coupon ``C``: zero at the root, nondecreasing along paths."""

    c: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, tree: ScenarioTree, levels) -> "AnnuityProcess":
        c = _node_field(tree, levels, "annuity")
        if abs(c[0][0]) > 0:
            raise ValueError("annuity must start at zero")
        for k in range(tree.K):
            drop = np.repeat(c[k], tree.branching[k]) - c[k + 1]
            if drop.max() > MONO_TOL:
                raise ValueError(f"annuity decreases between levels {k} and {k + 1}")
        return cls(c)


@dataclass(frozen=True)
class CreditProduct:
    """``1{0 < tau <= T} Z_tau + 1{tau > T} Y``; either leg may be absent."""

    recovery: RecoveryProcess | None = None
    survival: SurvivalClaim | None = None


def _at_leaves(tree: ScenarioTree, levels: tuple[np.ndarray, ...]) -> np.ndarray:
    """``(K + 1, N_K)``: the node field read along every leaf's path."""
    return np.stack([levels[k][tree.ancestors(tree.K, k)] for k in range(tree.K + 1)])


def _path_terms(model: DefaultModel) -> tuple[np.ndarray, np.ndarray]:
    """Per leaf path: ``Gamma_k`` and the one-step default probability of step ``k``."""
    tree = model.tree
    gamma = _at_leaves(tree, model.hazard.levels)
    step = np.stack([-np.expm1(-tree.intensity[k] * tree.grid.dt[k])[tree.ancestors(tree.K, k)] for k in range(tree.K)])
    return gamma, step


def _alive_only(model: DefaultModel, alive: np.ndarray, t: int) -> GValueField:
    return GValueField(t, alive, np.zeros((t, model.tree.sizes[t])))


# ---------------------------------------------------------------------------
# marked-claim form


def marked_survival(model: DefaultModel, claim: SurvivalClaim) -> MarkedClaim:
    phi = np.zeros((model.K + 1, model.tree.n_leaves))
    phi[model.K] = claim.y
    return MarkedClaim(phi, nonnegative=True)


def marked_recovery(model: DefaultModel, z: RecoveryProcess, s: int = 0, t: int | None = None) -> MarkedClaim:
    t = model.K if t is None else t
    zl = _at_leaves(model.tree, z.z)
    phi = np.zeros((model.K + 1, model.tree.n_leaves))
    phi[s:t] = zl[s:t]
    return MarkedClaim(phi, nonnegative=True)


def marked_annuity(model: DefaultModel, c: AnnuityProcess, s: int = 0, t: int | None = None) -> MarkedClaim:
    t = model.K if t is None else t
    cl = _at_leaves(model.tree, c.c)
    phi = np.zeros((model.K + 1, model.tree.n_leaves))
    phi[s:t] = cl[s:t]
    phi[t:] = cl[t]
    return MarkedClaim(phi, nonnegative=True)


def marked_product(model: DefaultModel, product: CreditProduct) -> MarkedClaim:
    claim = MarkedClaim(np.zeros((model.K + 1, model.tree.n_leaves)), nonnegative=True)
    if product.recovery is not None:
        claim = claim + marked_recovery(model, product.recovery)
    if product.survival is not None:
        claim = claim + marked_survival(model, product.survival)
    return claim


# ---------------------------------------------------------------------------
# closed forms


def price_survival_claim(model: DefaultModel, ambiguity: AmbiguitySet, claim: SurvivalClaim, t: int) -> GValueField:
    """Alive: ``E_t(Y exp(-(Gamma_K - Gamma_t)))``; defaulted: zero."""
    gamma, _ = _path_terms(model)
    leaf = claim.y * np.exp(-(gamma[model.K] - gamma[t]))
    return _alive_only(model, expectation_at(model.tree, ambiguity, leaf, t), t)


def price_recovery(model: DefaultModel, ambiguity: AmbiguitySet, z: RecoveryProcess, s: int, t: int) -> GValueField:
    """Alive at ``s``: ``E_s(sum_{k=s}^{t-1} Z_k exp(-(Gamma_k - Gamma_s)) (1 - exp(-mu_k dt_k)))``."""
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    gamma, step = _path_terms(model)
    zl = _at_leaves(model.tree, z.z)
    leaf = np.zeros(model.tree.n_leaves)
    for k in range(s, t):
        leaf += zl[k] * np.exp(-(gamma[k] - gamma[s])) * step[k]
    return _alive_only(model, expectation_at(model.tree, ambiguity, leaf, s), s)


def price_annuity(model: DefaultModel, ambiguity: AmbiguitySet, c: AnnuityProcess, s: int, t: int) -> GValueField:
    """Alive at ``s``: coupons read at bucket left endpoints, plus ``C_t`` on survival past ``t``."""
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    gamma, step = _path_terms(model)
    cl = _at_leaves(model.tree, c.c)
    leaf = cl[t] * np.exp(-(gamma[t] - gamma[s]))
    for k in range(s, t):
        leaf = leaf + cl[k] * np.exp(-(gamma[k] - gamma[s])) * step[k]
    return _alive_only(model, expectation_at(model.tree, ambiguity, leaf, s), s)


def tower_check_products(model: DefaultModel, ambiguity: AmbiguitySet, product: CreditProduct, s: int, t: int) -> float:
    claim = marked_product(model, product)
    return weak_tower_gap(model.tree, ambiguity, model.hazard, claim, s, t).max_abs()


# ---------------------------------------------------------------------------
# streams on the extended tree


def _defaulted_read(model: DefaultModel, levels: tuple[np.ndarray, ...], k: int) -> np.ndarray:
    """Extended level ``k``: for status ``j + 1`` the field at the time-``t_j`` ancestor."""
    tree = model.tree
    parts = [np.zeros(tree.sizes[k])]
    for j in range(k):
        parts.append(levels[j][tree.ancestors(k, j)])
    return np.concatenate(parts)


def as_payment_stream(model: DefaultModel, product) -> PaymentStream:
    """Cumulative payments on the extended tree, status-major per level."""
    tree, gt = model.tree, model.gtree
    K = tree.K
    lv = []
    for k in range(K + 1):
        status = gt.status(k)
        if isinstance(product, SurvivalClaim):
            a = np.zeros(gt.size(k))
            if k == K:
                a[status == 0] = product.y
        elif isinstance(product, RecoveryProcess):
            a = _defaulted_read(model, product.z, k)
        elif isinstance(product, AnnuityProcess):
            a = _defaulted_read(model, product.c, k)
            a[status == 0] = product.c[k]
        elif isinstance(product, CreditProduct):
            a = np.zeros(gt.size(k))
            if product.recovery is not None:
                a += _defaulted_read(model, product.recovery.z, k)
            if product.survival is not None and k == K:
                a[status == 0] += product.survival.y
        else:
            raise TypeError(f"unsupported product {type(product).__name__}")
        lv.append(a)
    stream = PaymentStream(tuple(lv), "G")
    _assert_monotone_g(model, stream)
    return stream


def _assert_monotone_g(model: DefaultModel, stream: PaymentStream) -> None:
    gt = model.gtree
    kernel_dummy = [np.full((model.tree.sizes[k], model.tree.branching[k]), 1.0) for k in range(model.K)]
    for k in range(model.K):
        child, _ = gt.transitions(k, kernel_dummy[k])
        drop = stream.levels[k][:, None] - stream.levels[k + 1][child]
        if drop.max(initial=0.0) > MONO_TOL:
            raise AssertionError(f"payment stream decreases between levels {k} and {k + 1}")
