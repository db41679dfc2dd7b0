"""Robust superhedging of payment streams on the reference and extended markets.

A ``Market`` flattens either tree into per-level arrays: the traded asset at
each node, padded child indices, the kernel stack the envelope maximises
over, and a support mask marking which successors some prior can reach.
Both markets share every routine below.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .default_model import DefaultModel
from .errors import ConfigError, DecompositionError, NumericalAssertionError
from .lattice import AmbiguitySet, ScenarioTree, martingale_vertices

RESID_TOL = 1e-10
CHECK_TOL = 1e-12


@dataclass(frozen=True)
class Market:
    kind: str  # "F" or "G"
    mode: str  # "reference", "product" or "saturated"
    tree: ScenarioTree
    asset: tuple[np.ndarray, ...]
    child: tuple[np.ndarray, ...]
    kernels: tuple[np.ndarray, ...]
    support: tuple[np.ndarray, ...]
    fnode: tuple[np.ndarray, ...]
    status: tuple[np.ndarray, ...]
    parent: tuple[np.ndarray, ...]

    @property
    def K(self) -> int:
        return self.tree.K

    def size(self, k: int) -> int:
        return len(self.asset[k])

    def reachable(self) -> list[np.ndarray]:
        """Nodes reached with positive mass by some prior."""
        reach = [np.ones(1, dtype=bool)]
        for k in range(self.K):
            nxt = np.zeros(self.size(k + 1), dtype=bool)
            ok = self.support[k] & reach[k][:, None]
            nxt[self.child[k][ok]] = True
            reach.append(nxt)
        return reach


def _require_polytope(ambiguity: AmbiguitySet) -> None:
    if not ambiguity.is_polytope:
        raise ConfigError("superhedging needs martingale-polytope ambiguity at every node")


def _parents(child: np.ndarray, n_next: int) -> np.ndarray:
    parent = np.full(n_next, -1, dtype=np.int64)
    # padded duplicates point at a real child of the same row
    parent[child.ravel()] = np.repeat(np.arange(child.shape[0]), child.shape[1])
    return parent


def f_market(ambiguity: AmbiguitySet) -> Market:
    _require_polytope(ambiguity)
    tree = ambiguity.tree
    child, kernels, support, parent = [], [], [], []
    for k in range(tree.K):
        c = tree.children(k)
        st = ambiguity.stacks[k]
        child.append(c)
        kernels.append(st)
        support.append((st > 0).any(axis=1))
        parent.append(_parents(c, tree.sizes[k + 1]))
    return Market(
        kind="F",
        mode="reference",
        tree=tree,
        asset=tree.asset,
        child=tuple(child),
        kernels=tuple(kernels),
        support=tuple(support),
        fnode=tuple(np.arange(n) for n in tree.sizes),
        status=tuple(np.zeros(n, dtype=np.int64) for n in tree.sizes),
        parent=(np.full(1, -1, dtype=np.int64), *parent),
    )


def g_market(model: DefaultModel, ambiguity: AmbiguitySet, mode: str = "product") -> Market:
    """Extended market; the asset is the reference asset and cannot default.

    ``product``: kernels are the product of each F-vertex with the one-step
    default law. ``saturated``: alive nodes take every martingale kernel over
    the ``2 b`` (child, default flag) outcomes, excluding the default outcomes
    where the intensity is zero.
    """
    if mode not in ("product", "saturated"):
        raise ConfigError(f"unknown extended-market mode {mode!r}")
    _require_polytope(ambiguity)
    if mode == "saturated" and any(lv.box is not None for lv in ambiguity.levels):
        raise ConfigError("saturated extended mode does not take box bounds")
    tree, gt = model.tree, model.gtree
    asset, child, kernels, support, fnode, status, parent = [], [], [], [], [], [], []
    for k in range(tree.K + 1):
        fnode.append(gt.fnode(k))
        status.append(gt.status(k))
        asset.append(tree.asset[k][fnode[-1]])
    parent.append(np.full(1, -1, dtype=np.int64))
    for k in range(tree.K):
        n, b = tree.sizes[k], tree.branching[k]
        fst = ambiguity.stacks[k]
        m = fst.shape[1]
        c, _ = gt.transitions(k, fst[:, 0])
        masses = np.stack([gt.transitions(k, fst[:, j])[1] for j in range(m)], axis=1)  # (n_g, M, 2b)
        if mode == "saturated":
            masses = _saturated_alive(tree, gt, k, masses, n, b)
        sup = (masses > 0).any(axis=1)
        child.append(c)
        kernels.append(np.ascontiguousarray(masses))
        support.append(sup)
        parent.append(_parents(c, gt.size(k + 1)))
    return Market(
        kind="G",
        mode=mode,
        tree=tree,
        asset=tuple(asset),
        child=tuple(child),
        kernels=tuple(kernels),
        support=tuple(support),
        fnode=tuple(fnode),
        status=tuple(status),
        parent=tuple(parent),
    )


def _saturated_alive(tree, gt, k, masses, n, b) -> np.ndarray:
    """Replace alive rows by the vertices of the martingale polytope on ``2 b`` outcomes."""
    ratios = tree.asset[k + 1].reshape(n, b) / tree.asset[k][:, None]
    rows = []
    cache: dict[tuple, np.ndarray] = {}
    for i in range(n):
        may_default = gt.default[k][i] > 0
        key = (tuple(np.round(ratios[i], 14)), bool(may_default))
        if key not in cache:
            outcome = np.concatenate([ratios[i], ratios[i]])
            if may_default:
                cache[key] = martingale_vertices(outcome, 1.0)
            else:
                v = martingale_vertices(ratios[i], 1.0)
                cache[key] = np.hstack([v, np.zeros_like(v)])
        rows.append(cache[key])
    m_alive = max(r.shape[0] for r in rows)
    m_def = masses.shape[1]
    m = max(m_alive, m_def)
    out = np.zeros((masses.shape[0], m, 2 * b))
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
        out[i, len(r) :] = r[0]
    out[n:, :m_def] = masses[n:]
    out[n:, m_def:] = masses[n:, :1]
    return out


# ---------------------------------------------------------------------------
# streams and stopping rules


@dataclass(frozen=True)
class PaymentStream:
    """Cumulative payments ``A[k]`` per node of a market level; ``A[0] = 0``."""

    levels: tuple[np.ndarray, ...]
    kind: str = "F"

    def __post_init__(self):
        lv = tuple(np.asarray(a, dtype=float) for a in self.levels)
        if lv[0].shape != (1,) or lv[0][0] != 0.0:
            raise ValueError("payment stream must start at zero")
        for k, a in enumerate(lv):
            if not np.all(np.isfinite(a)) or np.any(a < 0):
                raise ValueError(f"payment stream level {k} must be finite and nonnegative")
        object.__setattr__(self, "levels", lv)

    def check_monotone(self, market: Market) -> float:
        """Largest decrease along any edge; raises when a decrease exceeds ``1e-12``."""
        worst = 0.0
        for k in range(market.K):
            drop = self.levels[k][:, None] - self.levels[k + 1][market.child[k]]
            worst = max(worst, float(drop.max(initial=0.0)))
        if worst > CHECK_TOL:
            raise NumericalAssertionError(f"payment stream decreases by {worst:.3g} along some path")
        return worst

    def scale(self, c: float) -> "PaymentStream":
        return PaymentStream(tuple(c * a for a in self.levels), self.kind)

    @classmethod
    def terminal(cls, market: Market, payoff) -> "PaymentStream":
        """Single payment at ``t_K``, given per market leaf."""
        lv = [np.zeros(market.size(k)) for k in range(market.K)]
        lv.append(np.asarray(payoff, dtype=float))
        return cls(tuple(lv), market.kind)

    @classmethod
    def zero(cls, market: Market) -> "PaymentStream":
        return cls(tuple(np.zeros(market.size(k)) for k in range(market.K + 1)), market.kind)


@dataclass(frozen=True)
class StoppingRule:
    """Per reference-node flags; the rule stops at the first flagged node of a path.

    ``t_K`` is always flagged so every path stops.
    """

    flags: tuple[np.ndarray, ...]
    name: str = "rule"

    @classmethod
    def deterministic(cls, tree: ScenarioTree, k: int) -> "StoppingRule":
        if not 0 <= k <= tree.K:
            raise ValueError(f"stopping date {k} outside [0, {tree.K}]")
        flags = [np.full(n, j >= k) for j, n in enumerate(tree.sizes)]
        return cls(tuple(flags), f"t={k}")

    @classmethod
    def barrier(cls, tree: ScenarioTree, level: float, direction: str = "up", start: int = 0) -> "StoppingRule":
        """First time from ``start`` on when the asset is at or beyond ``level``."""
        if direction not in ("up", "down"):
            raise ValueError("direction must be 'up' or 'down'")
        flags = []
        for j, s in enumerate(tree.asset):
            hit = s >= level if direction == "up" else s <= level
            flags.append(hit & (j >= start) if j < tree.K else np.ones(len(s), dtype=bool))
        return cls(tuple(flags), f"barrier_{direction}_{level:g}")

    def stopped(self, market: Market) -> list[np.ndarray]:
        """Per market level, whether the rule has stopped at or before that node."""
        out = []
        for k in range(market.K + 1):
            here = self.flags[k][market.fnode[k]].copy()
            if k == market.K:
                here[:] = True
            if k > 0:
                here |= out[-1][market.parent[k]]
            out.append(here)
        return out

    def first_hit(self, market: Market) -> list[np.ndarray]:
        st = self.stopped(market)
        return [st[0]] + [st[k] & ~st[k - 1][market.parent[k]] for k in range(1, market.K + 1)]


def _stopped_value(market: Market, stream: PaymentStream, rule: StoppingRule) -> tuple[list, list]:
    """``A`` frozen at the rule's stop, for nodes at or after the stop."""
    st = rule.stopped(market)
    frozen = []
    for k in range(market.K + 1):
        a = stream.levels[k].copy()
        if k > 0:
            prev = frozen[-1][market.parent[k]]
            after = st[k - 1][market.parent[k]]
            a = np.where(after, prev, a)
        frozen.append(a)
    return st, frozen


# ---------------------------------------------------------------------------
# envelope and decomposition


@dataclass(frozen=True)
class Envelope:
    levels: tuple[np.ndarray, ...]
    stopped: tuple[np.ndarray, ...]
    argmax: tuple[np.ndarray, ...]

    @property
    def root(self) -> float:
        return float(self.levels[0][0])


def robust_envelope(market: Market, stream: PaymentStream, tau: StoppingRule | None = None) -> Envelope:
    """``Y_k = sup_kappa E_kappa[Y_{k+1}]`` before ``tau`` and ``A_tau`` from ``tau`` on."""
    tau = tau or StoppingRule.deterministic(market.tree, market.K)
    st, frozen = _stopped_value(market, stream, tau)
    y = [frozen[market.K]]
    args = []
    for k in range(market.K - 1, -1, -1):
        best, arg = _backend.sup_step(y[-1], market.child[k], market.kernels[k])
        y.append(np.where(st[k], frozen[k], best))
        args.append(arg)
    return Envelope(tuple(y[::-1]), tuple(st), tuple(args[::-1]))


@dataclass(frozen=True)
class SuperhedgeResult:
    price: float
    delta: tuple[np.ndarray, ...]
    slack: tuple[np.ndarray, ...] = ()
    envelope: tuple[np.ndarray, ...] = ()
    residual: float = 0.0


def extract_strategy(market: Market, envelope: Envelope) -> SuperhedgeResult:
    """Per node, the hedge making the envelope a robust supermartingale minus a trading gain.

    The slack ``D`` is accumulated forward from zero at the root and is
    nonincreasing along supported edges whenever every residual is
    nonpositive; a positive residual means the ambiguity set is not
    saturated for this stream.
    """
    y = envelope.levels
    scale = max(1.0, max(float(np.abs(v).max()) for v in y))
    deltas, slack = [], [np.zeros(1)]
    worst = -np.inf
    for k in range(market.K):
        d, resid = _backend.minimax_step(
            y[k + 1], y[k], market.asset[k + 1], market.asset[k], market.child[k], market.support[k]
        )
        worst = max(worst, float(resid.max(initial=-np.inf)))
        if resid.max(initial=0.0) > RESID_TOL * scale:
            bad = int(resid.argmax())
            raise DecompositionError(
                f"decomposition failure at level {k}, node {bad}: residual {resid[bad]:.3g} "
                "(ambiguity set not saturated for this stream)"
            )
        inc = y[k + 1][market.child[k]] - y[k][:, None] - d[:, None] * (
            market.asset[k + 1][market.child[k]] - market.asset[k][:, None]
        )
        nxt = np.zeros(market.size(k + 1))
        # write padded duplicates first so real entries win
        order = np.argsort(market.support[k].ravel(), kind="stable")
        nxt[market.child[k].ravel()[order]] = (slack[-1][:, None] + inc).ravel()[order]
        deltas.append(d)
        slack.append(nxt)
    return SuperhedgeResult(
        price=float(y[0][0]),
        delta=tuple(deltas),
        slack=tuple(slack),
        envelope=tuple(y),
        residual=worst,
    )


def global_price(market: Market, stream: PaymentStream) -> float:
    return robust_envelope(market, stream).root


def _check_order(market: Market, sigma: StoppingRule, tau: StoppingRule) -> None:
    ss, st = sigma.stopped(market), tau.stopped(market)
    for k in range(market.K + 1):
        if np.any(st[k] & ~ss[k]):
            raise ValueError(f"sigma stops after tau on some path (level {k})")


def local_price(
    market: Market, stream: PaymentStream, sigma: StoppingRule, tau: StoppingRule
) -> dict[tuple[int, int], float]:
    """``E_sigma(A_tau - A_sigma)`` at every node where ``sigma`` first stops."""
    _check_order(market, sigma, tau)
    env = robust_envelope(market, stream, tau)
    hits = sigma.first_hit(market)
    reach = market.reachable()
    out = {}
    for k in range(market.K + 1):
        for g in np.flatnonzero(hits[k] & reach[k]):
            out[(k, int(g))] = float(env.levels[k][g] - stream.levels[k][g])
    return out


def minimal_capital(market: Market, stream: PaymentStream, tau: StoppingRule) -> list[np.ndarray]:
    """``W_k = max(A_k, min_delta max_succ(W_{k+1} - delta dS))``, ``W = A_tau`` from ``tau`` on."""
    st, frozen = _stopped_value(market, stream, tau)
    w = [frozen[market.K]]
    for k in range(market.K - 1, -1, -1):
        zero = np.zeros(market.size(k))
        _, cap = _backend.minimax_step(
            w[-1], zero, market.asset[k + 1], market.asset[k], market.child[k], market.support[k]
        )
        w.append(np.where(st[k], frozen[k], np.maximum(stream.levels[k], cap)))
    return w[::-1]


def capital_strategy(market: Market, stream: PaymentStream, tau: StoppingRule | None = None) -> SuperhedgeResult:
    """Hedge financed by the minimal pathwise capital.

    Always a valid superhedge; it coincides with the decomposition of the
    envelope when the ambiguity set is saturated.
    """
    tau = tau or StoppingRule.deterministic(market.tree, market.K)
    w = minimal_capital(market, stream, tau)
    env = Envelope(tuple(w), tuple(tau.stopped(market)), ())
    return extract_strategy(market, env)


@dataclass(frozen=True)
class DualityReport:
    gap: float
    weak_violation: float
    capital: dict[tuple[int, int], float]
    price: dict[tuple[int, int], float]
    mode: str


def duality_gap(market: Market, stream: PaymentStream, sigma: StoppingRule, tau: StoppingRule) -> DualityReport:
    """Max over ``sigma`` nodes of ``|W - E_sigma(A_tau - A_sigma)|`` with ``W`` the minimal capital."""
    _check_order(market, sigma, tau)
    w = minimal_capital(market, stream, tau)
    env = robust_envelope(market, stream, tau)
    hits = sigma.first_hit(market)
    reach = market.reachable()
    cap, price = {}, {}
    gap, weak = 0.0, 0.0
    for k in range(market.K + 1):
        for g in np.flatnonzero(hits[k] & reach[k]):
            c = float(w[k][g] - stream.levels[k][g])
            p = float(env.levels[k][g] - stream.levels[k][g])
            cap[(k, int(g))] = c
            price[(k, int(g))] = p
            gap = max(gap, abs(c - p))
            weak = min(weak, c - p)
    if weak < -CHECK_TOL * max(1.0, max(map(abs, price.values()), default=1.0)):
        raise NumericalAssertionError(f"weak duality violated: capital below price by {-weak:.3g}")
    mode = "weak-duality" if market.mode == "product" else "duality"
    return DualityReport(gap=gap, weak_violation=weak, capital=cap, price=price, mode=mode)


# ---------------------------------------------------------------------------
# verification


def cumulative_gain(market: Market, delta: Sequence[np.ndarray]) -> list[np.ndarray]:
    gains = [np.zeros(1)]
    for k in range(market.K):
        g = gains[-1][market.parent[k + 1]] + delta[k][market.parent[k + 1]] * (
            market.asset[k + 1] - market.asset[k][market.parent[k + 1]]
        )
        gains.append(g)
    return gains


def slack_monotonicity(market: Market, result: SuperhedgeResult) -> float:
    """Largest increase of the slack along a supported edge (``<= 1e-12`` required)."""
    worst = 0.0
    reach = market.reachable()
    for k in range(market.K):
        up = result.slack[k + 1][market.child[k]] - result.slack[k][:, None]
        ok = market.support[k] & reach[k][:, None]
        worst = max(worst, float(np.where(ok, up, -np.inf).max(initial=-np.inf)))
    return worst


@dataclass(frozen=True)
class VerificationReport:
    worst_violation: float
    per_rule: dict[str, float]
    nested_worst: float
    slack_increase: float
    price: float

    @property
    def ok(self) -> bool:
        return self.worst_violation >= -CHECK_TOL * max(1.0, abs(self.price)) and self.slack_increase <= CHECK_TOL * max(
            1.0, abs(self.price)
        )

    def render(self) -> str:
        lines = [f"price={self.price:.17g}"]
        lines += [f"rule {name}: min_surplus={v:.17g}" for name, v in self.per_rule.items()]
        lines.append(f"nested_min_surplus={self.nested_worst:.17g}")
        lines.append(f"slack_max_increase={self.slack_increase:.17g}")
        lines.append(f"worst_violation={self.worst_violation:.17g}")
        return "\n".join(lines) + "\n"


def verify_superhedge(
    market: Market,
    stream: PaymentStream,
    result: SuperhedgeResult,
    rules: Sequence[StoppingRule] = (),
) -> VerificationReport:
    """Pathwise check of ``v + gains >= A`` at each rule's stop, on reachable paths.

    Deterministic dates are always tested. The nested check asks that from
    every date ``k1`` the local price ``Y_{k1} - A_{k1}`` plus later gains
    covers later increments of ``A``.
    """
    tree = market.tree
    reach = market.reachable()
    gains = cumulative_gain(market, result.delta)
    test = [StoppingRule.deterministic(tree, k) for k in range(tree.K + 1)] + list(rules)
    per_rule = {}
    for rule in test:
        hits = rule.first_hit(market)
        worst = np.inf
        for k in range(market.K + 1):
            m = hits[k] & reach[k]
            if m.any():
                surplus = result.price + gains[k][m] - stream.levels[k][m]
                worst = min(worst, float(surplus.min()))
        per_rule[rule.name] = worst
    nested = np.inf
    if result.envelope:
        y = result.envelope
        for k1 in range(market.K + 1):
            anc = np.arange(market.size(k1))
            for k2 in range(k1, market.K + 1):
                m = reach[k2]
                surplus = y[k1][anc] + gains[k2] - gains[k1][anc] - stream.levels[k2]
                nested = min(nested, float(surplus[m].min()))
                if k2 < market.K:
                    anc = anc[market.parent[k2 + 1]]
    slack_up = slack_monotonicity(market, result) if result.slack else 0.0
    worst = min(min(per_rule.values()), nested)
    return VerificationReport(
        worst_violation=float(worst),
        per_rule=per_rule,
        nested_worst=float(nested),
        slack_increase=slack_up,
        price=result.price,
    )


def superhedge(market: Market, stream: PaymentStream) -> SuperhedgeResult:
    stream.check_monotone(market)
    return extract_strategy(market, robust_envelope(market, stream))
