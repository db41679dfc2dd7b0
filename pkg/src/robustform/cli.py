"""Command line front end.

    robustform price|superhedge|verify|simulate --config PATH --out DIR [--seed N] [--mode saturated|product]

Exit codes: 0 success, 2 configuration error, 3 numerical assertion failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, prior_from_config
from .default_model import sample_defaults
from .errors import ConfigError, DecompositionError, NumericalAssertionError
from .g_expectation import GValueField, g_conditional
from .products import (
    AnnuityProcess,
    RecoveryProcess,
    SurvivalClaim,
    as_payment_stream,
    marked_annuity,
    marked_recovery,
    marked_survival,
    price_annuity,
    price_recovery,
    price_survival_claim,
)
from .suite import barrier_rules, run_checks
from .superhedging import (
    PaymentStream,
    StoppingRule,
    capital_strategy,
    duality_gap,
    extract_strategy,
    f_market,
    g_market,
    robust_envelope,
    verify_superhedge,
)

log = logging.getLogger("robustform")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
IDENTITY_TOL = 1e-12
WORST_TOL = 1e-12


def fmt(v: float) -> str:
    return f"{v:.17g}"


def _threads() -> int:
    raw = os.environ.get("ROBUSTFORM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"ROBUSTFORM_THREADS must be an integer, got {raw!r}")


def _map(fn, items):
    items = list(items)
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# price


def _forward_value(cfg: RunConfig, p, t: int) -> GValueField:
    """Value at ``t`` of the payments still due after ``t``."""
    model, amb, K = cfg.model, cfg.ambiguity, cfg.tree.K
    if isinstance(p, SurvivalClaim):
        return price_survival_claim(model, amb, p, t)
    if isinstance(p, RecoveryProcess):
        return price_recovery(model, amb, p, t, K)
    if isinstance(p, AnnuityProcess):
        return price_annuity(model, amb, p, t, K)
    out = GValueField(t, np.zeros(cfg.tree.sizes[t]), np.zeros((t, cfg.tree.sizes[t])))
    if p.recovery is not None:
        out = GValueField(t, out.alive + price_recovery(model, amb, p.recovery, t, K).alive, out.defaulted)
    if p.survival is not None:
        out = GValueField(t, out.alive + price_survival_claim(model, amb, p.survival, t).alive, out.defaulted)
    return out


def _identity_check(cfg: RunConfig, name: str, p, t: int, field: GValueField) -> None:
    model, amb, tree, K = cfg.model, cfg.ambiguity, cfg.tree, cfg.tree.K
    if isinstance(p, SurvivalClaim):
        ref = g_conditional(tree, amb, model.hazard, marked_survival(model, p), t)
    elif isinstance(p, RecoveryProcess):
        ref = g_conditional(tree, amb, model.hazard, marked_recovery(model, p, t, K), t)
    elif isinstance(p, AnnuityProcess):
        ref = g_conditional(tree, amb, model.hazard, marked_annuity(model, p, t, K), t)
    else:
        return
    gap = (field - ref).max_abs()
    if gap > IDENTITY_TOL * max(1.0, field.max_abs()):
        raise NumericalAssertionError(f"{name}: pricing identity off by {gap:.3g} at t={t}")


def _field_rows(cfg: RunConfig, field: GValueField):
    tree = cfg.tree
    t = field.t
    time = fmt(tree.grid.times[t])
    for i, v in enumerate(field.alive):
        yield [time, tree.node_id(t, i), "alive", "", fmt(v)]
    for j in range(t):
        for i, v in enumerate(field.defaulted[j]):
            yield [time, tree.node_id(t, i), "defaulted", j, fmt(v)]


def cmd_price(cfg: RunConfig, out: Path, args) -> int:
    if not cfg.products:
        log.warning("no products configured; nothing written")
        return 0

    def job(item):
        name, p = item
        rows = []
        for t in cfg.product_times[name]:
            f = _forward_value(cfg, p, t)
            _identity_check(cfg, name, p, t, f)
            rows.extend(_field_rows(cfg, f))
        return name, rows

    for name, rows in _map(job, cfg.products.items()):
        _write_csv(out / f"{name}.csv", ["time", "node", "status", "bucket", "value"], rows)
        print(f"wrote {out / (name + '.csv')}")
    return 0


# ---------------------------------------------------------------------------
# superhedge


def _market_rows(cfg: RunConfig, market, k: int):
    tree = cfg.tree
    for g in range(market.size(k)):
        s, i = int(market.status[k][g]), int(market.fnode[k][g])
        status = "n/a" if market.kind == "F" else ("alive" if s == 0 else "defaulted")
        bucket = "" if s == 0 else s - 1
        yield g, [fmt(tree.grid.times[k]), tree.node_id(k, i), status, bucket]


def cmd_superhedge(cfg: RunConfig, out: Path, args) -> int:
    if not cfg.ambiguity.is_polytope:
        raise ConfigError(f"{cfg.source}: ambiguity: superhedge needs kind 'polytope'")
    mode = args.mode or cfg.superhedge.get("mode", "saturated")
    tol = float(cfg.superhedge.get("duality_tol", 1e-9))
    tree = cfg.tree
    rules = barrier_rules(cfg)
    streams = cfg.streams
    if not streams:
        log.warning("no streams configured; nothing written")
        return 0
    fm = f_market(cfg.ambiguity)
    gm = None
    if any("product" in s for s in streams):
        gm = g_market(cfg.model, cfg.ambiguity, mode)
    sigma0, tau_t = StoppingRule.deterministic(tree, 0), StoppingRule.deterministic(tree, tree.K)

    def job(st):
        if "payoff" in st:
            market, stream = fm, PaymentStream.terminal(fm, st["payoff"])
        else:
            market, stream = gm, as_payment_stream(cfg.model, cfg.products[st["product"]])
        stream.check_monotone(market)
        env = robust_envelope(market, stream)
        gap = duality_gap(market, stream, sigma0, tau_t)
        if market.mode == "product":
            res = capital_strategy(market, stream)
        else:
            res = extract_strategy(market, env)
        rep = verify_superhedge(market, stream, res, rules)
        return st["name"], market, env, res, rep, gap

    failed = []
    for name, market, env, res, rep, gap in _map(job, streams):
        price_rows, strat_rows = [], []
        for k in range(market.K + 1):
            for g, head in _market_rows(cfg, market, k):
                price_rows.append(head + [fmt(env.levels[k][g])])
                delta = res.delta[k][g] if k < market.K else 0.0
                strat_rows.append(head + [fmt(delta), fmt(res.slack[k][g])])
        _write_csv(out / f"{name}_price.csv", ["time", "node", "status", "bucket", "value"], price_rows)
        _write_csv(out / f"{name}_strategy.csv", ["time", "node", "status", "bucket", "delta", "slack"], strat_rows)
        lines = [
            f"stream={name}",
            f"market={market.kind}",
            f"mode={gap.mode}",
            f"robust_price={fmt(env.root)}",
            f"hedge_capital={fmt(res.price)}",
            f"duality_gap={fmt(gap.gap)}",
        ]
        text = "\n".join(lines) + "\n" + rep.render()
        (out / f"{name}_report.txt").write_text(text, encoding="utf-8")
        print(text, end="")
        if gap.mode == "duality" and gap.gap > tol:
            failed.append(f"{name}: duality gap {gap.gap:.3g} exceeds {tol:g}")
        if rep.worst_violation < -WORST_TOL * max(1.0, abs(res.price)):
            failed.append(f"{name}: superhedge violated by {-rep.worst_violation:.3g}")
    if failed:
        raise NumericalAssertionError("; ".join(failed))
    return 0


# ---------------------------------------------------------------------------
# verify and simulate


def cmd_verify(cfg: RunConfig, out: Path, args) -> int:
    checks = run_checks(cfg)
    text = "\n".join(c.line() for c in checks) + "\n"
    (out / "verify_report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_NUMERIC if any(c.required and c.passed is False for c in checks) else 0


def _payoffs(cfg: RunConfig, leaves: np.ndarray, buckets: np.ndarray) -> dict[str, np.ndarray]:
    tree, K = cfg.tree, cfg.tree.K

    def at_bucket(levels):
        vals = np.empty(len(leaves))
        for k in range(K + 1):
            m = buckets == k
            vals[m] = levels[k][tree.ancestors(K, k)[leaves[m]]]
        return vals

    out = {}
    for name, p in cfg.products.items():
        if isinstance(p, SurvivalClaim):
            v = np.where(buckets == K, p.y[leaves], 0.0)
        elif isinstance(p, RecoveryProcess):
            v = np.where(buckets < K, at_bucket(p.z), 0.0)
        elif isinstance(p, AnnuityProcess):
            v = at_bucket(p.c)
        else:
            v = np.zeros(len(leaves))
            if p.recovery is not None:
                v += np.where(buckets < K, at_bucket(p.recovery.z), 0.0)
            if p.survival is not None:
                v += np.where(buckets == K, p.survival.y[leaves], 0.0)
        out[name] = v
    return out


def cmd_simulate(cfg: RunConfig, out: Path, args) -> int:
    seed = args.seed if args.seed is not None else cfg.simulate.get("seed")
    if seed is None:
        raise ConfigError(f"{cfg.source}: simulate needs --seed or 'simulate.seed'")
    sel = prior_from_config(cfg)
    sel.validate(cfg.ambiguity)
    n = int(cfg.simulate.get("samples", 1000))
    tree = cfg.tree
    rng = np.random.default_rng(seed)
    node = np.zeros(n, dtype=np.int64)
    for k in range(tree.K):
        cum = np.cumsum(sel.kernels[k][node], axis=1)
        u = rng.random(n)
        c = (u[:, None] >= cum[:, :-1]).sum(axis=1)
        node = node * tree.branching[k] + c
    xi = rng.random(n)
    buckets = sample_defaults(cfg.model.hazard, node, xi)
    pay = _payoffs(cfg, node, buckets)
    rows = []
    for i in range(n):
        b = "survival" if buckets[i] == tree.K else int(buckets[i])
        rows.append([i, tree.node_id(tree.K, int(node[i])), b] + [fmt(pay[name][i]) for name in pay])
    _write_csv(out / "simulate.csv", ["path", "leaf", "bucket"] + list(pay), rows)
    surv = float(np.mean(buckets == tree.K))
    print(f"samples={n} seed={seed} survival_fraction={fmt(surv)}")
    return 0


COMMANDS = {"price": cmd_price, "superhedge": cmd_superhedge, "verify": cmd_verify, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robustform", description=__doc__.splitlines()[0] if __doc__ else None)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", required=True, help="output directory (created if missing)")
    ap.add_argument("--seed", type=int, default=None, help="RNG seed for simulate")
    ap.add_argument("--mode", choices=["saturated", "product"], default=None, help="extended-market prior mode")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAssertionError, DecompositionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
