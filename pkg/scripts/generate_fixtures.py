"""Record oracle values used as test fixtures.

Run from the repository root: ``python3 scripts/generate_fixtures.py``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from robustform.config import load_config
from robustform.g_expectation import MarkedClaim, build_counterexample
from robustform.oracle import brute_expectation

ROOT = Path(__file__).resolve().parents[1]


def oracle_weak_tower_gap(tree, amb, claim: MarkedClaim, s: int, t: int) -> float:
    """Max of the nested minus the direct value, every side by enumeration."""
    alive_t, dead_t = brute_expectation(tree, amb, claim, t)
    anc = tree.ancestors(tree.K, t)
    phi = np.empty_like(claim.phi)
    for j in range(tree.K + 1):
        phi[j] = dead_t[j, anc] if j < t else alive_t[anc]
    nested_a, nested_d = brute_expectation(tree, amb, MarkedClaim(phi, nonnegative=True), s)
    direct_a, direct_d = brute_expectation(tree, amb, claim, s)
    gaps = [float((nested_a - direct_a).max())]
    if s:
        gaps.append(float((nested_d - direct_d).max()))
    return max(gaps)


def main() -> None:
    cfg = load_config(ROOT / "configs" / "counterexample.json")
    tree, amb = cfg.tree, cfg.ambiguity
    ce = build_counterexample(tree, amb, cfg.model.hazard, strike=float(cfg.verify["strike"]))
    gap = oracle_weak_tower_gap(tree, amb, ce.claim, ce.s, ce.t)
    out = {
        "config": "configs/counterexample.json",
        "s": ce.s,
        "r": ce.r,
        "t": ce.t,
        "l": ce.l,
        "oracle_gap": gap,
    }
    path = ROOT / "tests" / "fixtures" / "counterexample_gap.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out))


if __name__ == "__main__":
    main()
