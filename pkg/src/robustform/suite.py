"""Invariant checks run by ``robustform verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecompositionError, NoSublinearityError
from .f_expectation import (
    check_tower,
    conditional_under_prior,
    maximizing_selection,
    sublinear_expectation,
)
from .g_expectation import (
    MarkedClaim,
    build_counterexample,
    check_yan_commutation,
    g_conditional,
    g_conditional_via_gtree,
    weak_tower_gap,
)
from .default_model import verify_hazard_aggregation
from .products import (
    AnnuityProcess,
    CreditProduct,
    RecoveryProcess,
    SurvivalClaim,
    marked_annuity,
    marked_product,
    marked_recovery,
    marked_survival,
    price_annuity,
    price_recovery,
    price_survival_claim,
)
from .superhedging import (
    PaymentStream,
    StoppingRule,
    duality_gap,
    extract_strategy,
    f_market,
    g_market,
    robust_envelope,
    verify_superhedge,
)


@dataclass(frozen=True)
class Check:
    name: str
    value: float | None
    passed: bool | None  # None: skipped or informational
    note: str = ""
    required: bool = True

    def line(self) -> str:
        val = "" if self.value is None else f" value={self.value:.6g}"
        note = f" ({self.note})" if self.note else ""
        if self.passed is None and self.required:
            return f"{self.name} skipped: {self.note}"
        tag = "INFO" if self.passed is None else ("PASS" if self.passed else "FAIL")
        return f"{self.name} {tag}{val}{note}"


def leaf_claims(cfg) -> list[tuple[str, np.ndarray]]:
    tree = cfg.tree
    strike = float(cfg.verify.get("strike", tree.asset[0][0]))
    s = tree.asset[-1]
    out = [("call", np.maximum(s - strike, 0.0)), ("put", np.maximum(strike - s, 0.0))]
    for name, p in cfg.products.items():
        if isinstance(p, SurvivalClaim):
            out.append((name, p.y))
    for st in cfg.streams:
        if "payoff" in st:
            out.append((st["name"], st["payoff"]))
    return out


def marked_claims(cfg) -> list[tuple[str, MarkedClaim]]:
    tree, model = cfg.tree, cfg.model
    K = tree.K
    leaves = dict(leaf_claims(cfg))
    phi = np.empty((K + 1, tree.n_leaves))
    phi[: max(1, K // 2)] = leaves["call"]
    phi[max(1, K // 2) :] = leaves["put"]
    out = [("mixed_call_put", MarkedClaim(phi, nonnegative=True))]
    for name, p in cfg.products.items():
        out.append((name, _marked(model, p)))
    return out


def _marked(model, p) -> MarkedClaim:
    if isinstance(p, SurvivalClaim):
        return marked_survival(model, p)
    if isinstance(p, RecoveryProcess):
        return marked_recovery(model, p)
    if isinstance(p, AnnuityProcess):
        return marked_annuity(model, p)
    return marked_product(model, p)


def _product_class(model, p) -> CreditProduct | None:
    if isinstance(p, SurvivalClaim):
        return CreditProduct(survival=p)
    if isinstance(p, RecoveryProcess):
        return CreditProduct(recovery=p)
    if isinstance(p, CreditProduct):
        return p
    return None


def run_checks(cfg) -> list[Check]:
    tree, amb, model = cfg.tree, cfg.ambiguity, cfg.model
    hz = model.hazard
    K = tree.K
    pairs = [(s, t) for t in range(K + 1) for s in range(t + 1)]
    checks: list[Check] = []

    leaves = leaf_claims(cfg)
    gap = max(check_tower(tree, amb, x, s, t) for _, x in leaves for s, t in pairs)
    checks.append(Check("f_tower", gap, gap <= 1e-12))

    worst = 0.0
    for _, x in leaves:
        full = sublinear_expectation(tree, amb, x)
        sel = maximizing_selection(tree, amb, x)
        cond = conditional_under_prior(tree, sel, x)
        worst = max(worst, max(float(np.abs(cond.at(k) - full.at(k)).max()) for k in range(K + 1)))
    checks.append(Check("consistency_maximizing_selection", worst, worst <= 1e-12))

    err = verify_hazard_aggregation(tree, amb, hz)
    checks.append(Check("hazard_aggregation", err, err <= 1e-12))

    marked = marked_claims(cfg)
    g_gap, weak_min = 0.0, np.inf
    for _, c in marked:
        via = g_conditional_via_gtree(model.gtree, amb, c)
        for t in range(K + 1):
            g_gap = max(g_gap, (g_conditional(tree, amb, hz, c, t) - via[t]).max_abs())
        if c.nonnegative:
            for s, t in pairs:
                weak_min = min(weak_min, weak_tower_gap(tree, amb, hz, c, s, t).min())
    checks.append(Check("g_consistency_gtree", g_gap, g_gap <= 1e-12))
    limit = int(cfg.verify.get("oracle_limit", 10**4))
    if amb.selection_count() <= limit:
        from .oracle import brute_expectation

        o_gap = 0.0
        for _, c in marked:
            for t in range(K + 1):
                alive, dead = brute_expectation(tree, amb, c, t, limit)
                g = g_conditional(tree, amb, hz, c, t)
                o_gap = max(o_gap, float(np.abs(alive - g.alive).max()))
                if t:
                    o_gap = max(o_gap, float(np.abs(dead - g.defaulted).max()))
        checks.append(Check("g_consistency_oracle", o_gap, o_gap <= 1e-12))
    else:
        checks.append(Check("g_consistency_oracle", None, None, f"{amb.selection_count()} priors exceed limit {limit}"))
    checks.append(Check("weak_tower_nonnegative", weak_min, weak_min >= -1e-12))

    prod_gap, yan_gap, id_gap = 0.0, 0.0, 0.0
    n_class = 0
    for name, p in cfg.products.items():
        cp = _product_class(model, p)
        if cp is not None:
            n_class += 1
            c = marked_product(model, cp)
            for s, t in pairs:
                prod_gap = max(prod_gap, weak_tower_gap(tree, amb, hz, c, s, t).max_abs())
                yan_gap = max(yan_gap, check_yan_commutation(tree, amb, hz, c, s, t))
        id_gap = max(id_gap, pricing_identity_gap(cfg, p))
    if n_class:
        checks.append(Check("product_tower", prod_gap, prod_gap <= 1e-10))
        checks.append(
            Check("yan_condition2", yan_gap, None, "holds" if yan_gap <= 1e-10 else "does not hold (sufficient condition only)", required=False)
        )
    else:
        checks.append(Check("product_tower", None, None, "no product-class contracts configured"))
    checks.append(Check("pricing_identities", id_gap, id_gap <= 1e-12))

    checks.append(counterexample_check(cfg))
    checks.extend(superhedge_checks(cfg))
    return checks


def pricing_identity_gap(cfg, p) -> float:
    tree, amb, model = cfg.tree, cfg.ambiguity, cfg.model
    K = tree.K
    gap = 0.0
    if isinstance(p, SurvivalClaim):
        c = marked_survival(model, p)
        for t in range(K + 1):
            gap = max(gap, (price_survival_claim(model, amb, p, t) - g_conditional(tree, amb, model.hazard, c, t)).max_abs())
    elif isinstance(p, (RecoveryProcess, AnnuityProcess)):
        for t in range(K + 1):
            for s in range(t + 1):
                if isinstance(p, RecoveryProcess):
                    f, c = price_recovery(model, amb, p, s, t), marked_recovery(model, p, s, t)
                else:
                    f, c = price_annuity(model, amb, p, s, t), marked_annuity(model, p, s, t)
                gap = max(gap, (f - g_conditional(tree, amb, model.hazard, c, s)).max_abs())
    return gap


def counterexample_check(cfg) -> Check:
    tree, amb = cfg.tree, cfg.ambiguity
    name = "weak_tower_strict_gap>0"
    if amb.is_singleton():
        return Check(name, None, None, "no sublinearity")
    mu = np.concatenate(tree.intensity[:-1])
    if np.ptp(mu) > 0 or mu[0] <= 0:
        return Check(name, None, None, "intensity not constant and positive")
    strike = float(cfg.verify.get("strike", tree.asset[0][0]))
    try:
        ce = build_counterexample(tree, amb, cfg.model.hazard, strike=strike)
    except NoSublinearityError:
        return Check(name, None, None, "no sublinearity for the call/put pair")
    return Check(name, ce.gap, ce.gap > 1e-10, f"s={ce.s} r={ce.r} t={ce.t} l={ce.l}")


def superhedge_checks(cfg) -> list[Check]:
    tree, amb = cfg.tree, cfg.ambiguity
    if not amb.is_polytope:
        return [Check("superhedge_duality", None, None, "finite kernel list is not saturated")]
    market = f_market(amb)
    streams = [(n, x) for n, x in leaf_claims(cfg)]
    rules = barrier_rules(cfg)
    gap, worst, slack = 0.0, np.inf, 0.0
    sigma0, tau_t = StoppingRule.deterministic(tree, 0), StoppingRule.deterministic(tree, tree.K)
    failures = []
    for name, x in streams:
        a = PaymentStream.terminal(market, x)
        try:
            res = extract_strategy(market, robust_envelope(market, a))
        except DecompositionError as exc:
            failures.append(f"{name}: {exc}")
            continue
        rep = verify_superhedge(market, a, res, rules)
        worst = min(worst, rep.worst_violation)
        slack = max(slack, rep.slack_increase)
        gap = max(gap, duality_gap(market, a, sigma0, tau_t).gap)
    out = [
        Check("superhedge_duality", gap, gap <= 1e-9 and not failures, "; ".join(failures)),
        Check("superhedge_worst_violation", worst, worst >= -1e-12),
        Check("superhedge_slack_monotone", slack, slack <= 1e-12),
    ]
    if any(lv.box is not None for lv in amb.levels):
        return out
    gm = g_market(cfg.model, amb, "saturated")
    g_gap = 0.0
    from .products import as_payment_stream

    for name, p in cfg.products.items():
        stream = as_payment_stream(cfg.model, p)
        g_gap = max(g_gap, duality_gap(gm, stream, StoppingRule.deterministic(tree, 0), tau_t).gap)
    out.append(Check("g_superhedge_duality_saturated", g_gap, g_gap <= 1e-9))
    return out


def barrier_rules(cfg) -> list[StoppingRule]:
    tree = cfg.tree
    out = []
    for b in cfg.superhedge.get("barriers", []):
        out.append(StoppingRule.barrier(tree, float(b["level"]), b.get("direction", "up"), int(b.get("start", 0))))
    return out
