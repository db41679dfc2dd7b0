"""Compiled kernels against the numpy fallback on the backward-step hot loops.

    python3 benchmarks/bench_kernels.py --depth 7 --repeat 5
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from robustform import _fallback
from robustform.lattice import AmbiguitySet, FiniteKernels, IntensityRule, MartingalePolytope, TreeConfig, build_tree
from robustform.superhedging import f_market

try:
    from robustform import _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def last_level_inputs(depth: int, branching: int, n_kernels: int, seed: int):
    rng = np.random.default_rng(seed)
    factors = (1.2, 1.0, 0.8)[: branching] if branching == 3 else (1.1, 0.9)
    tree = build_tree(TreeConfig.uniform(1.0, depth, 100.0, factors, IntensityRule("constant", 0.0)))
    k = depth - 1
    amb_f = AmbiguitySet.build(tree, FiniteKernels(rng.dirichlet(np.ones(branching), size=n_kernels)))
    market = f_market(AmbiguitySet.build(tree, MartingalePolytope()))
    v_next = rng.normal(size=tree.sizes[depth])
    return tree, k, amb_f, market, v_next


def bench(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depth", type=int, nargs="+", default=[6, 7])
    ap.add_argument("--branching", type=int, default=3)
    ap.add_argument("--kernels", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _kernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    print(f"{'kernel':<14}{'depth':>6}{'nodes':>9}{'cython ms':>12}{'numpy ms':>12}{'speedup':>9}{'max diff':>11}")
    for depth in args.depth:
        tree, k, amb, market, v_next = last_level_inputs(depth, args.branching, args.kernels, args.seed)
        child = np.ascontiguousarray(tree.children(k), dtype=np.int64)
        stack = np.ascontiguousarray(amb.stacks[k])
        v_now = np.zeros(tree.sizes[k])
        support = np.ascontiguousarray(market.support[k], dtype=np.uint8)
        s_next, s_now = market.asset[k + 1], market.asset[k]
        cases = {
            "sup_step": (
                lambda: _kernels.sup_step(v_next, child, stack),
                lambda: _fallback.sup_step(v_next, child, stack),
            ),
            "minimax_step": (
                lambda: _kernels.minimax_step(v_next, v_now, s_next, s_now, child, support),
                lambda: _fallback.minimax_step(v_next, v_now, s_next, s_now, child, support.astype(bool)),
            ),
        }
        for name, (fast, slow) in cases.items():
            diff = max(float(np.abs(a - b).max()) for a, b in zip(fast(), slow()))
            tc, tp = bench(fast, args.repeat), bench(slow, args.repeat)
            print(f"{name:<14}{depth:>6}{tree.sizes[k]:>9}{tc * 1e3:>12.3f}{tp * 1e3:>12.3f}{tp / tc:>9.1f}{diff:>11.2e}")


if __name__ == "__main__":
    main()
