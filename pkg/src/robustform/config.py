"""Run configuration: JSON text, schema validation, object construction.

Every error carries the line of the offending entry so the CLI can report
``file:line: message``.
"""

from __future__ import annotations

import json
import json.decoder
import json.scanner
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .default_model import DefaultModel
from .errors import ConfigError
from .lattice import (
    AmbiguitySet,
    FiniteKernels,
    IntensityRule,
    MartingalePolytope,
    PriorSelection,
    ScenarioTree,
    TimeGrid,
    TreeConfig,
    build_tree,
)
from .products import AnnuityProcess, CreditProduct, RecoveryProcess, SurvivalClaim


class _PosDict(dict):
    pos: int = 0


class _PosList(list):
    pos: int = 0


class _LocatingDecoder(json.JSONDecoder):
    """Decoder that remembers where each object and array starts."""

    def __init__(self):
        super().__init__()

        def parse_object(s_and_end, *args):
            obj, end = json.decoder.JSONObject(s_and_end, *args)
            out = _PosDict(obj)
            out.pos = s_and_end[1] - 1
            return out, end

        def parse_array(s_and_end, scan_once):
            arr, end = json.decoder.JSONArray(s_and_end, scan_once)
            out = _PosList(arr)
            out.pos = s_and_end[1] - 1
            return out, end

        self.parse_object = parse_object
        self.parse_array = parse_array
        self.scan_once = json.scanner.py_make_scanner(self)


def _line_of(text: str, doc: Any, path) -> int | None:
    """Best line for a JSON path: the key's line inside its parent object."""
    node, pos = doc, getattr(doc, "pos", 0)
    for step in path:
        try:
            child = node[step]
        except (KeyError, IndexError, TypeError):
            break
        if isinstance(node, dict) and isinstance(step, str):
            found = text.find(json.dumps(step), pos)
            if found >= 0:
                pos = found
        if hasattr(child, "pos"):
            pos = child.pos
        node = child
    return text.count("\n", 0, pos) + 1


def _schema() -> dict:
    return json.loads(resources.files("robustform").joinpath("schema/config.schema.json").read_text("utf-8"))


@dataclass
class RunConfig:
    source: str
    raw: dict
    tree: ScenarioTree
    ambiguity: AmbiguitySet
    model: DefaultModel
    products: dict[str, Any] = field(default_factory=dict)
    product_times: dict[str, list[int]] = field(default_factory=dict)
    streams: list[dict] = field(default_factory=list)
    superhedge: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)


class _Ctx:
    def __init__(self, text: str, doc, source: str):
        self.text, self.doc, self.source = text, doc, source

    def fail(self, path, msg: str):
        line = _line_of(self.text, self.doc, path)
        where = "/".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{self.source}:{line}: {where}: {msg}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, str(path))


def parse_config(text: str | dict, source: str = "<config>") -> RunConfig:
    """Parse JSON text, or a mapping which is re-serialised so errors still carry lines."""
    if isinstance(text, dict):
        text = json.dumps(text, indent=2)
    try:
        doc = _LocatingDecoder().decode(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    ctx = _Ctx(text, doc, source)
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            path += extra[:1]
        ctx.fail(path, err.message)
    return _build(ctx, doc)


def _tree_config(ctx: _Ctx, doc: dict) -> TreeConfig:
    t = doc["tree"]
    facs = t["factors"]
    if all(isinstance(f, (int, float)) for f in facs):
        steps = t.get("steps")
        if steps is None and "times" in t:
            steps = len(t["times"]) - 1
        if steps is None:
            ctx.fail(["tree"], "give 'steps' or 'times' when factors are shared by all steps")
        factors = tuple(tuple(float(f) for f in facs) for _ in range(steps))
    elif all(isinstance(f, list) for f in facs):
        factors = tuple(tuple(float(x) for x in f) for f in facs)
        steps = len(factors)
        if "steps" in t and t["steps"] != steps:
            ctx.fail(["tree", "steps"], f"steps={t['steps']} but {steps} factor lists given")
    else:
        ctx.fail(["tree", "factors"], "mix of numbers and lists")
    try:
        if "times" in t:
            if "horizon" in t:
                ctx.fail(["tree", "horizon"], "give either 'times' or 'horizon', not both")
            grid = TimeGrid(tuple(t["times"]))
        else:
            grid = TimeGrid.uniform(float(t.get("horizon", steps)), steps)
    except ConfigError as exc:
        ctx.fail(["tree", "times" if "times" in t else "horizon"], str(exc))
    if grid.steps != steps:
        ctx.fail(["tree", "times"], f"{grid.steps} intervals but {steps} steps")
    inten = doc.get("intensity", {"kind": "constant", "value": 0.0})
    kind = inten["kind"]
    needed = {"constant": ["value"], "table": ["table"], "affine_log_asset": ["a", "b"]}[kind]
    for key in needed:
        if key not in inten:
            ctx.fail(["intensity"], f"intensity kind {kind!r} needs {key!r}")
    rule = IntensityRule(
        kind=kind,
        value=float(inten.get("value", 0.0)),
        table=tuple(inten["table"]) if "table" in inten else None,
        a=float(inten.get("a", 0.0)),
        b=float(inten.get("b", 0.0)),
    )
    return TreeConfig(grid=grid, s0=float(t["s0"]), factors=factors, intensity=rule)


def _ambiguity(ctx: _Ctx, doc: dict, tree: ScenarioTree) -> AmbiguitySet:
    amb = doc["ambiguity"]
    try:
        if amb["kind"] == "kernels":
            if "kernels" not in amb:
                ctx.fail(["ambiguity"], "kind 'kernels' needs a 'kernels' list")
            if "box" in amb:
                ctx.fail(["ambiguity", "box"], "box bounds apply to polytopes only")
            spec = FiniteKernels(np.array(amb["kernels"], dtype=float))
        else:
            if "kernels" in amb:
                ctx.fail(["ambiguity", "kernels"], "polytope ambiguity takes no kernel list")
            spec = MartingalePolytope(np.array(amb["box"], dtype=float) if "box" in amb else None)
        return AmbiguitySet.build(tree, spec)
    except ValueError as exc:
        if isinstance(exc, ConfigError) and str(exc).startswith(ctx.source):
            raise
        ctx.fail(["ambiguity"], str(exc))


def leaf_payoff(ctx: _Ctx | None, path, spec: dict, tree: ScenarioTree) -> np.ndarray:
    s = tree.asset[-1]
    kind = spec["kind"]

    def need(key):
        if key not in spec:
            if ctx is None:
                raise ConfigError(f"payoff kind {kind!r} needs {key!r}")
            ctx.fail(path, f"payoff kind {kind!r} needs {key!r}")
        return spec[key]

    if kind == "constant":
        out = np.full(len(s), float(need("value")))
    elif kind == "call":
        out = np.maximum(s - need("strike"), 0.0)
    elif kind == "put":
        out = np.maximum(need("strike") - s, 0.0)
    elif kind == "straddle":
        out = np.abs(s - need("strike"))
    elif kind == "asset":
        out = np.array(s)
    elif kind == "digital_up":
        out = (s >= need("strike")).astype(float)
    else:
        out = np.asarray(need("values"), dtype=float)
        if out.shape != s.shape:
            ctx.fail(path + ["values"], f"need {len(s)} leaf values, got {len(out)}")
    return out


def _node_field(ctx: _Ctx, path, spec: dict, tree: ScenarioTree) -> list[np.ndarray]:
    kind = spec["kind"]
    key = {"constant": "value", "asset_fraction": "value", "linear_time": "rate", "values": "values"}[kind]
    if key not in spec:
        ctx.fail(path, f"field kind {kind!r} needs {key!r}")
    if kind == "constant":
        return [np.full(n, float(spec["value"])) for n in tree.sizes]
    if kind == "asset_fraction":
        return [float(spec["value"]) * a for a in tree.asset]
    if kind == "linear_time":
        return [np.full(n, float(spec["rate"]) * tk) for n, tk in zip(tree.sizes, tree.grid.times)]
    vals = spec["values"]
    if len(vals) != tree.K + 1:
        ctx.fail(path + ["values"], f"need {tree.K + 1} levels, got {len(vals)}")
    out = []
    for k, v in enumerate(vals):
        if len(v) not in (1, tree.sizes[k]):
            ctx.fail(path + ["values", k], f"level {k} needs 1 or {tree.sizes[k]} values")
        out.append(np.broadcast_to(np.asarray(v, dtype=float), (tree.sizes[k],)).copy())
    return out


def _products(ctx: _Ctx, doc: dict, tree: ScenarioTree, cfg: RunConfig) -> None:
    for i, p in enumerate(doc.get("products", [])):
        path = ["products", i]
        name = p["name"]
        if name in cfg.products:
            ctx.fail(path + ["name"], f"duplicate product name {name!r}")
        try:
            kind = p["type"]
            if kind == "survival":
                if "payoff" not in p:
                    ctx.fail(path, "survival product needs 'payoff'")
                obj = SurvivalClaim(leaf_payoff(ctx, path + ["payoff"], p["payoff"], tree))
            elif kind == "recovery":
                if "recovery" not in p:
                    ctx.fail(path, "recovery product needs 'recovery'")
                obj = RecoveryProcess.build(tree, _node_field(ctx, path + ["recovery"], p["recovery"], tree))
            elif kind == "annuity":
                if "coupon" not in p:
                    ctx.fail(path, "annuity product needs 'coupon'")
                obj = AnnuityProcess.build(tree, _node_field(ctx, path + ["coupon"], p["coupon"], tree))
            else:
                rec = p.get("recovery")
                pay = p.get("payoff")
                if rec is None and pay is None:
                    ctx.fail(path, "credit product needs 'recovery' and/or 'payoff'")
                obj = CreditProduct(
                    recovery=RecoveryProcess.build(tree, _node_field(ctx, path + ["recovery"], rec, tree)) if rec else None,
                    survival=SurvivalClaim(leaf_payoff(ctx, path + ["payoff"], pay, tree)) if pay else None,
                )
        except ConfigError:
            raise
        except ValueError as exc:
            ctx.fail(path, str(exc))
        times = list(p.get("times", range(tree.K + 1)))
        for j, t in enumerate(times):
            if t > tree.K:
                ctx.fail(path + ["times", j], f"time index {t} beyond K={tree.K}")
        cfg.products[name] = obj
        cfg.product_times[name] = times


def _build(ctx: _Ctx, doc: dict) -> RunConfig:
    tc = _tree_config(ctx, doc)
    try:
        tree = build_tree(tc)
    except ConfigError as exc:
        msg = str(exc)
        ctx.fail(["intensity"] if "intensity" in msg else ["tree"], msg)
    amb = _ambiguity(ctx, doc, tree)
    cfg = RunConfig(source=ctx.source, raw=doc, tree=tree, ambiguity=amb, model=DefaultModel.build(tree))
    _products(ctx, doc, tree, cfg)
    for i, s in enumerate(doc.get("streams", [])):
        path = ["streams", i]
        if ("payoff" in s) == ("product" in s):
            ctx.fail(path, "a stream needs exactly one of 'payoff' or 'product'")
        if "product" in s and s["product"] not in cfg.products:
            ctx.fail(path + ["product"], f"unknown product {s['product']!r}")
        entry = {"name": s["name"]}
        if "payoff" in s:
            entry["payoff"] = leaf_payoff(ctx, path + ["payoff"], s["payoff"], tree)
        else:
            entry["product"] = s["product"]
        cfg.streams.append(entry)
    cfg.superhedge = dict(doc.get("superhedge", {}))
    cfg.verify = dict(doc.get("verify", {}))
    cfg.simulate = dict(doc.get("simulate", {}))
    if "prior" in cfg.simulate:
        prior = cfg.simulate["prior"]
        if len(prior) != tree.K:
            ctx.fail(["simulate", "prior"], f"need one entry per step ({tree.K}), got {len(prior)}")
        for k, entry in enumerate(prior):
            idx = np.atleast_1d(np.asarray(entry, dtype=np.int64))
            if len(idx) not in (1, tree.sizes[k]):
                ctx.fail(["simulate", "prior", k], f"level {k} needs 1 or {tree.sizes[k]} indices")
            if idx.max() >= amb.kernel_count(k):
                ctx.fail(["simulate", "prior", k], f"kernel index {int(idx.max())} out of range ({amb.kernel_count(k)} available)")
    return cfg


def prior_from_config(cfg: RunConfig) -> PriorSelection:
    """Selection named in ``simulate.prior``, or the unique one when there is no ambiguity."""
    amb = cfg.ambiguity
    if "prior" in cfg.simulate:
        return PriorSelection.from_indices(amb, [np.asarray(p) for p in cfg.simulate["prior"]])
    if amb.is_singleton():
        return PriorSelection.from_indices(amb, [0] * cfg.tree.K)
    raise ConfigError(f"{cfg.source}: simulate: ambiguous configuration needs 'simulate.prior'")
