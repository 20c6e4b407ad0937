"""Scene file schema: strata, cells, coefficient expressions and the
verification plan, serialized as JSON with exact rationals as strings.

A scene file packages the hypotheses the extension driver needs as
explicit data: ambient dimension, jet order ``p``, smoothness budget
``q``, a stratification (cells with coordinate permutations and declared
boundary relations), one coefficient expression per multi-index per
stratum, and a plan describing which checks to run with which seeds and
tolerances.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from . import expr, geometry
from .errors import SceneFormatError
from .expr import ExprFn
from .extension import Scene, Stratum
from .geometry import GraphCell, Interval, PointCell, Slab
from .jets import FieldSpec, mi_from_string, mi_to_string, multi_indices

SCHEMA = "jetfield-scene/1"


@dataclass
class Plan:
    seed: int = 0
    samples_per_stratum: int = 100
    tolerance: float = 1e-4
    checks: tuple = ("structure", "consistency", "agreement")
    flatness: tuple = ()
    whitney: Optional[dict] = None


@dataclass
class SceneFile:
    scene: Scene
    plan: Plan
    raw: dict = field(repr=False, default_factory=dict)


def _fail(path: str, message: str):
    raise SceneFormatError(f"{path}: {message}")


def _num(value, path: str):
    if isinstance(value, bool) or value is None:
        _fail(path, f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return Fraction(value) if isinstance(value, int) else value
    if isinstance(value, str):
        try:
            return Fraction(value)
        except ValueError:
            _fail(path, f"bad rational literal {value!r}")
    _fail(path, f"expected a number, got {type(value).__name__}")


def _opt_num(value, path: str):
    return None if value is None else _num(value, path)


def parse_expr(obj, arity: int, path: str) -> ExprFn:
    try:
        return expr.exprfn_from_json(obj, arity)
    except Exception as exc:
        _fail(path, f"bad expression: {exc}")


def parse_open_cell(obj: dict, path: str):
    kind = obj.get("type")
    if kind == "interval":
        lo = _opt_num(obj.get("lower"), f"{path}.lower")
        hi = _opt_num(obj.get("upper"), f"{path}.upper")
        return Interval(None if lo is None else float(lo),
                        None if hi is None else float(hi))
    if kind == "slab":
        base = parse_open_cell(obj["base"], f"{path}.base")
        dim = geometry.open_cell_dim(base)
        lo = obj.get("lower")
        hi = obj.get("upper")
        return Slab(base,
                    None if lo is None else parse_expr(lo, dim, f"{path}.lower"),
                    None if hi is None else parse_expr(hi, dim, f"{path}.upper"))
    _fail(path, f"unknown open-cell type {kind!r}")


def parse_cell(obj: dict, n: int, path: str):
    kind = obj.get("type")
    if kind == "point":
        coords = obj.get("coords")
        if not isinstance(coords, list) or len(coords) != n:
            _fail(f"{path}.coords", f"need {n} coordinates")
        return PointCell(tuple(_num(c, f"{path}.coords[{i}]")
                               for i, c in enumerate(coords)))
    if kind in ("interval", "slab"):
        base = parse_open_cell(obj, path)
        if geometry.open_cell_dim(base) != n:
            _fail(path, "open-cell stratum must be full-dimensional")
        return geometry.identity_graph_cell(base)
    if kind == "graph":
        base = parse_open_cell(obj["base"], f"{path}.base")
        m = geometry.open_cell_dim(base)
        graph_raw = obj.get("graph", [])
        graph = tuple(parse_expr(g, m, f"{path}.graph[{i}]")
                      for i, g in enumerate(graph_raw))
        if m + len(graph) != n:
            _fail(path, f"graph cell dims {m}+{len(graph)} != ambient {n}")
        perm = tuple(obj.get("perm", range(n)))
        if sorted(perm) != list(range(n)):
            _fail(f"{path}.perm", "must be a permutation of the axes")
        return GraphCell(base, graph, perm)
    _fail(path, f"unknown cell type {kind!r}")


def parse_field(obj: dict, n: int, p: int, stratum_id: str, param_arity: int,
                path: str) -> FieldSpec:
    if not isinstance(obj, dict):
        _fail(path, "field must map multi-indices to expressions")
    expected = {mi_to_string(a) for a in multi_indices(n, p)}
    got = set(obj)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        _fail(path, f"field keys mismatch (missing {missing}, extra {extra})")
    coeffs = {}
    for key, e in obj.items():
        alpha = mi_from_string(key)
        coeffs[alpha] = parse_expr(e, param_arity, f"{path}[{key!r}]")
    return FieldSpec(n, p, stratum_id, param_arity, coeffs)


def load_scene(path) -> SceneFile:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: not valid JSON ({exc})") from exc
    return parse_scene(raw)


def parse_scene(raw: dict) -> SceneFile:
    if raw.get("schema") != SCHEMA:
        _fail("schema", f"expected {SCHEMA!r}, got {raw.get('schema')!r}")
    for key in ("n", "p", "q"):
        if not isinstance(raw.get(key), int) or raw[key] < 1:
            _fail(key, "must be a positive integer")
    n, p, q = raw["n"], raw["p"], raw["q"]
    if p > q:
        _fail("p", "requires p <= q")
    box = float(raw.get("box", geometry.DEFAULT_BOX_HALFWIDTH))

    strata_raw = raw.get("strata")
    if not isinstance(strata_raw, list) or not strata_raw:
        _fail("strata", "must be a nonempty array")
    strata, fields, flat = [], {}, set()
    for i, s in enumerate(strata_raw):
        path = f"strata[{i}]"
        sid = s.get("id")
        if not isinstance(sid, str) or not sid:
            _fail(f"{path}.id", "must be a nonempty string")
        cell = parse_cell(s.get("cell", {}), n, f"{path}.cell")
        boundary = tuple(s.get("boundary", []))
        m = 0 if isinstance(cell, PointCell) else cell.intrinsic_dim
        fld = parse_field(s.get("field", {}), n, p, sid, max(1, m),
                          f"{path}.field")
        strata.append(Stratum(sid, cell, boundary))
        fields[sid] = fld
        if s.get("flat"):
            flat.add(sid)

    scene = Scene(n, p, q, tuple(strata), fields, frozenset(flat), box)
    plan_raw = raw.get("plan", {})
    plan = Plan(
        seed=int(plan_raw.get("seed", 0)),
        samples_per_stratum=int(plan_raw.get("samples_per_stratum", 100)),
        tolerance=float(plan_raw.get("tolerance", 1e-4)),
        checks=tuple(plan_raw.get("checks",
                                  ("structure", "consistency", "agreement"))),
        flatness=tuple(plan_raw.get("flatness", ())),
        whitney=plan_raw.get("whitney"))
    return SceneFile(scene, plan, raw)


def dump_deterministic(obj) -> str:
    """Canonical JSON for byte-reproducible reports."""
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=True)


# ---------------------------------------------------------------------------
# set descriptors and cutoff specs (embeddable in scene files)


def cell_to_json(cell):
    if isinstance(cell, PointCell):
        return {"type": "point",
                "coords": [expr.number_to_json(v) for v in cell.point]}
    if isinstance(cell, GraphCell):
        return {"type": "graph", "base": open_cell_to_json(cell.base),
                "graph": [expr.exprfn_to_json(g) for g in cell.graph],
                "perm": list(cell.perm)}
    raise SceneFormatError(f"cannot serialize cell {type(cell).__name__}")


def open_cell_to_json(cell):
    if isinstance(cell, Interval):
        return {"type": "interval", "lower": cell.lower, "upper": cell.upper}
    return {"type": "slab", "base": open_cell_to_json(cell.base),
            "lower": None if cell.lower is None
            else expr.exprfn_to_json(cell.lower),
            "upper": None if cell.upper is None
            else expr.exprfn_to_json(cell.upper)}


def piece_from_json(obj: dict, n: int, path: str):
    if obj.get("type") == "ball":
        center = tuple(_num(c, f"{path}.center[{i}]")
                       for i, c in enumerate(obj["center"]))
        return geometry.Ball(center, float(_num(obj["radius"],
                                                f"{path}.radius")))
    return parse_cell(obj, n, path)


def piece_to_json(piece):
    if isinstance(piece, geometry.Ball):
        return {"type": "ball",
                "center": [expr.number_to_json(v) for v in piece.center],
                "radius": piece.radius}
    return cell_to_json(piece)


def descriptor_from_json(obj, n: int, path: str) -> geometry.SetDescriptor:
    if not isinstance(obj, list):
        _fail(path, "descriptor must be an array of pieces")
    return geometry.SetDescriptor(tuple(
        piece_from_json(p, n, f"{path}[{i}]") for i, p in enumerate(obj)))


def descriptor_to_json(desc: geometry.SetDescriptor):
    return [piece_to_json(p) for p in desc.pieces]


def cutoff_spec_from_json(obj: dict, n: int, path: str = "cutoff"):
    from .cutoff import CutoffSpec
    return CutoffSpec(
        descriptor_from_json(obj.get("w", []), n, f"{path}.w"),
        descriptor_from_json(obj.get("z", []), n, f"{path}.z"),
        eta=float(_num(obj.get("eta", 0.5), f"{path}.eta")),
        q=int(obj.get("q", 1)),
        rho=None if obj.get("rho") is None else float(obj["rho"]),
        box=float(obj.get("box", geometry.DEFAULT_BOX_HALFWIDTH)))


def cutoff_spec_to_json(spec) -> dict:
    out = {"w": descriptor_to_json(spec.w_desc),
           "z": descriptor_to_json(spec.z_desc),
           "eta": spec.eta, "q": spec.q, "box": spec.box}
    if spec.rho is not None:
        out["rho"] = spec.rho
    return out
