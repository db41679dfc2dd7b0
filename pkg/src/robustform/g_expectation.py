"""Sublinear conditional expectation on the default-enlarged filtration.

A claim on the product space is stored as a marked table ``phi[bucket, leaf]``
with bucket ``K`` meaning survival. At time ``t`` a name that defaulted in
bucket ``j < t`` carries the frozen mark ``j`` and is valued by the reference
expectation of ``phi[j]``; an alive name is valued by the reference
expectation of the bucket average weighted by the default law given survival
to ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .default_model import GTree, HazardField, _weights_from, path_hazard, sample_defaults
from .errors import NoSublinearityError
from .f_expectation import backward, expectation_at
from .lattice import AmbiguitySet, ScenarioTree

STRICT_TOL = 1e-10


@dataclass(frozen=True)
class MarkedClaim:
    """``phi`` has shape ``(K + 1, N_K)``; row ``K`` is the survival payoff."""

    phi: np.ndarray
    nonnegative: bool = False

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 2:
            raise ValueError("marked claim table must be two-dimensional")
        if not np.all(np.isfinite(phi)):
            raise ValueError("marked claim contains non-finite values")
        if self.nonnegative and np.any(phi < 0):
            raise ValueError("claim flagged nonnegative has negative entries")
        phi.flags.writeable = False
        object.__setattr__(self, "phi", phi)

    @property
    def K(self) -> int:
        return self.phi.shape[0] - 1

    @classmethod
    def unmarked(cls, x, K: int) -> "MarkedClaim":
        """Payoff that ignores the default time."""
        x = np.asarray(x, dtype=float)
        return cls(np.tile(x, (K + 1, 1)), nonnegative=bool(np.all(x >= 0)))

    def __add__(self, other: "MarkedClaim") -> "MarkedClaim":
        return MarkedClaim(self.phi + other.phi, self.nonnegative and other.nonnegative)

    def scale(self, c: float) -> "MarkedClaim":
        return MarkedClaim(c * self.phi, self.nonnegative and c >= 0)


@dataclass(frozen=True)
class GValueField:
    """Values at time ``t``: ``alive[i]`` and ``defaulted[j, i]`` for bucket ``j < t``."""

    t: int
    alive: np.ndarray
    defaulted: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))

    def value(self, status: int, i: int) -> float:
        """Status ``0`` alive, ``j + 1`` defaulted in bucket ``j``."""
        return float(self.alive[i] if status == 0 else self.defaulted[status - 1, i])

    def flat(self) -> np.ndarray:
        """Status-major flat vector matching the extended tree's node order."""
        return np.concatenate([self.alive, self.defaulted.ravel()])

    def __sub__(self, other: "GValueField") -> "GValueField":
        return GValueField(self.t, self.alive - other.alive, self.defaulted - other.defaulted)

    def max_abs(self) -> float:
        return float(np.abs(self.flat()).max())

    def min(self) -> float:
        return float(self.flat().min())


def _check_marked(tree: ScenarioTree, claim: MarkedClaim) -> None:
    if claim.phi.shape != (tree.K + 1, tree.n_leaves):
        raise ValueError(f"marked claim needs shape {(tree.K + 1, tree.n_leaves)}, got {claim.phi.shape}")


def hat_expectation(claim: MarkedClaim, hazard: HazardField, from_t: int, leaf: int | None = None):
    """Integral over the default law of ``1{no default by t_from} * claim``, per leaf."""
    tree = hazard.tree
    _check_marked(tree, claim)
    w = _weights_from(path_hazard(tree, hazard))
    vals = (claim.phi[from_t:] * w[from_t:]).sum(axis=0)
    return vals if leaf is None else float(vals[leaf])


def alive_leaf_field(claim: MarkedClaim, hazard: HazardField, t: int) -> np.ndarray:
    """``exp(Gamma_t) * hat_expectation(claim, t)`` with the factor folded into the weights."""
    w = _weights_from(path_hazard(hazard.tree, hazard), t)
    return (claim.phi[t:] * w[t:]).sum(axis=0)


def g_conditional(
    tree: ScenarioTree, ambiguity: AmbiguitySet, hazard: HazardField, claim: MarkedClaim, t: int
) -> GValueField:
    _check_marked(tree, claim)
    if not 0 <= t <= tree.K:
        raise ValueError(f"time index {t} outside [0, {tree.K}]")
    alive = expectation_at(tree, ambiguity, alive_leaf_field(claim, hazard, t), t)
    defaulted = np.array([expectation_at(tree, ambiguity, claim.phi[j], t) for j in range(t)]).reshape(t, tree.sizes[t])
    return GValueField(t, alive, defaulted)


def g_conditional_via_gtree(gtree: GTree, ambiguity: AmbiguitySet, claim: MarkedClaim) -> list[GValueField]:
    """All-time field computed on the extended tree.

    Default masses are pushed forward from each alive time-``t`` node with the
    one-step survival factors; the F-kernel at a reference node is shared by
    every status reached from that alive start, as it is under a product prior.
    """
    tree = gtree.tree
    _check_marked(tree, claim)
    K = tree.K
    # frozen marks: one reference recursion per bucket
    per_bucket = [backward(tree, ambiguity, claim.phi[j], K)[0] for j in range(K)]
    out = []
    for t in range(K + 1):
        alive_mass = np.ones(tree.sizes[t])
        bundle_parts: list[tuple[int, np.ndarray]] = []
        for u in range(t, K):
            b = tree.branching[u]
            dead = alive_mass * gtree.default[u]
            alive_mass = alive_mass * gtree.survive[u]
            bundle_parts = [(j, np.repeat(m, b)) for j, m in bundle_parts]
            bundle_parts.append((u, np.repeat(dead, b)))
            alive_mass = np.repeat(alive_mass, b)
        leaf = alive_mass * claim.phi[K]
        for j, m in bundle_parts:
            leaf = leaf + m * claim.phi[j]
        alive = backward(tree, ambiguity, leaf, K, t)[0][0]
        defaulted = np.array([per_bucket[j][t] for j in range(t)]).reshape(t, tree.sizes[t])
        out.append(GValueField(t, alive, defaulted))
    return out


def remark_inner(
    tree: ScenarioTree, ambiguity: AmbiguitySet, hazard: HazardField, claim: MarkedClaim, t: int
) -> MarkedClaim:
    """The time-``t`` value re-expressed as a marked claim.

    Bucket ``j < t`` gets the defaulted value at the leaf's time-``t``
    ancestor, later buckets and survival get the alive value there.
    """
    inner = g_conditional(tree, ambiguity, hazard, claim, t)
    anc = tree.ancestors(tree.K, t)
    phi = np.empty_like(claim.phi)
    for j in range(tree.K + 1):
        phi[j] = inner.defaulted[j, anc] if j < t else inner.alive[anc]
    return MarkedClaim(phi, nonnegative=claim.nonnegative)


def weak_tower_gap(
    tree: ScenarioTree, ambiguity: AmbiguitySet, hazard: HazardField, claim: MarkedClaim, s: int, t: int
) -> GValueField:
    """``E_s(E_t(X)) - E_s(X)`` per time-``s`` extended node; nonnegative for nonnegative claims."""
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    nested = g_conditional(tree, ambiguity, hazard, remark_inner(tree, ambiguity, hazard, claim, t), s)
    return nested - g_conditional(tree, ambiguity, hazard, claim, s)


@dataclass(frozen=True)
class Counterexample:
    claim: MarkedClaim
    s: int
    r: int
    t: int
    l: int
    gap: float
    gap_field: GValueField
    report: str


def _constant_intensity(tree: ScenarioTree) -> float:
    mu = np.concatenate(tree.intensity[:-1])
    if np.ptp(mu) > 0 or mu[0] <= 0:
        raise ValueError("counterexample construction needs a constant positive intensity")
    return float(mu[0])


def build_counterexample(
    tree: ScenarioTree,
    ambiguity: AmbiguitySet,
    hazard: HazardField,
    strike: float | None = None,
    x=None,
    y=None,
) -> Counterexample:
    """Search for a strictly sublinear pair and mark it so the weak tower is strict.

    ``x`` and ``y`` default to a call and a put struck at ``strike`` (the
    initial asset value if omitted).
    """
    if ambiguity.is_singleton():
        raise NoSublinearityError("no sublinearity available: every node has a single kernel")
    _constant_intensity(tree)
    k_strike = tree.asset[0][0] if strike is None else strike
    leaves = tree.asset[-1]
    x = np.maximum(leaves - k_strike, 0.0) if x is None else np.asarray(x, dtype=float)
    y = np.maximum(k_strike - leaves, 0.0) if y is None else np.asarray(y, dtype=float)
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("counterexample payoffs must be nonnegative")
    K = tree.K
    surv = np.exp(-np.array([hazard.at(k)[0] for k in range(K + 1)]))

    best: Counterexample | None = None
    lines = []
    for t in range(1, K):
        strict = (
            expectation_at(tree, ambiguity, x, t)
            + expectation_at(tree, ambiguity, y, t)
            - expectation_at(tree, ambiguity, x + y, t)
        )
        lines.append(f"t={t} max_strict_sublinearity={strict.max():.17g}")
        if strict.max() <= STRICT_TOL:
            continue
        for s in range(t):
            for r in range(s + 1, t + 1):
                for l in range(t, K + 1):
                    xb = x / (surv[s] - surv[r])
                    yb = y / surv[l]
                    phi = np.zeros((K + 1, tree.n_leaves))
                    phi[:r] = xb
                    phi[l:] = yb
                    claim = MarkedClaim(phi, nonnegative=True)
                    gap_field = weak_tower_gap(tree, ambiguity, hazard, claim, s, t)
                    gap = float(gap_field.flat().max())
                    if best is None or gap > best.gap + STRICT_TOL:
                        best = Counterexample(claim, s, r, t, l, gap, gap_field, "")
    if best is None or best.gap <= STRICT_TOL:
        raise NoSublinearityError("no strictly positive weak-tower gap found:\n" + "\n".join(lines))
    lines.append(f"s={best.s} r={best.r} t={best.t} l={best.l}")
    lines.append(f"weak_tower_gap_max={best.gap:.17g}")
    lines.append(f"weak_tower_gap_min={best.gap_field.min():.17g}")
    return Counterexample(best.claim, best.s, best.r, best.t, best.l, best.gap, best.gap_field, "\n".join(lines))


def check_yan_commutation(
    tree: ScenarioTree, ambiguity: AmbiguitySet, hazard: HazardField, claim: MarkedClaim, s: int, t: int
) -> float:
    """Max over time-``t`` nodes of ``|E_t(hat E[1{tau > s} X]) - hat E[E_t(1{tau > s} X)]|``.

    The outer integral on the right is exact: between consecutive thresholds
    ``exp(-Gamma_k(leaf))`` every leaf's bucket is constant in ``xi``, so the
    integral is a finite sum of reference expectations weighted by interval
    length.
    """
    _check_marked(tree, claim)
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    lhs = expectation_at(tree, ambiguity, hat_expectation(claim, hazard, s), t)

    cuts = np.unique(np.concatenate([[0.0, 1.0], np.exp(-path_hazard(tree, hazard)).ravel()]))
    leaves = np.arange(tree.n_leaves)
    rhs = np.zeros(tree.sizes[t])
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        buckets = sample_defaults(hazard, leaves, np.full(tree.n_leaves, 0.5 * (a + b)))
        payoff = np.where(buckets >= s, claim.phi[buckets, leaves], 0.0)
        rhs += (b - a) * expectation_at(tree, ambiguity, payoff, t)
    return float(np.abs(lhs - rhs).max())
