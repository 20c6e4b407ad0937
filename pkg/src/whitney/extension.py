"""Assembly of global extensions from jet fields on stratified scenes.

The driver works by induction on stratum dimension: point strata are glued
with ball cutoffs of disjoint support; for positive dimension the skeleton
(everything of lower dimension) is extended first, its sampled Taylor data
is subtracted from the field -- making the remainder numerically flat on
the skeleton -- and each top-dimensional graph cell then contributes a
term ``f_j * omega_j``: the degree-p normal polynomial of the cell's
field, cut off inside a cone neighborhood of the cell relative to the
rest of the scene.  Each term is identically zero wherever its cutoff
vanishes, so the assembled function is total on all of R^n.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import cutoff as cutoff_mod
from . import expr, geometry, verify
from .cutoff import CutoffFn, CutoffSpec, build_cutoff
from .errors import (FlatnessDeclarationMissing, SequenceLeavesCone,
                     SingularPoint, StratificationInvalid, SupportLeak)
from .geometry import (EMPTY_SET, GraphCell, PointCell, SetDescriptor,
                       open_cell_contains)
from .jets import (FieldSpec, PointJet, jet_compose, jet_eval, mi_factorial,
                   mi_order, multi_indices, taylor_jet, _eval_coeff)

# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class Stratum:
    id: str
    cell: object                      # PointCell | GraphCell
    boundary_ids: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        if isinstance(self.cell, PointCell):
            return 0
        return self.cell.intrinsic_dim

    def feature_size(self, x, scene) -> float:
        """Distance to the stratum's declared boundary (1 when there is
        none); used to scale finite-difference steps."""
        if not self.boundary_ids:
            return 1.0
        b = geometry.set_distance(scene.descriptor_for(self.boundary_ids), x,
                                  box=scene.box)
        return b.lo if b.lo > 0.0 else b.up


@dataclass(frozen=True)
class Scene:
    n: int
    p: int
    q: int
    strata: tuple[Stratum, ...]
    fields: Mapping[str, FieldSpec]
    flat_on: frozenset = frozenset()
    box: float = geometry.DEFAULT_BOX_HALFWIDTH

    def __post_init__(self):
        if self.p > self.q:
            raise StratificationInvalid("scene requires p <= q")

    def stratum(self, sid: str) -> Stratum:
        for s in self.strata:
            if s.id == sid:
                return s
        raise StratificationInvalid(f"unknown stratum {sid!r}")

    def descriptor_for(self, ids: Sequence[str]) -> SetDescriptor:
        pieces = []
        for sid in ids:
            cell = self.stratum(sid).cell
            pieces.append(cell)
        return SetDescriptor(tuple(pieces))

    def restrict(self, ids: Sequence[str]) -> "Scene":
        keep = [s for s in self.strata if s.id in set(ids)]
        return Scene(self.n, self.p, self.q, tuple(keep),
                     {s.id: self.fields[s.id] for s in keep},
                     self.flat_on & set(ids), self.box)

    @property
    def dim(self) -> int:
        return max((s.dim for s in self.strata), default=0)

    def validate(self, tol: float = 1e-7) -> list[str]:
        """Structural validation; returns a list of human-readable
        problems (empty means the stratification looks sound)."""
        problems = []
        ids = [s.id for s in self.strata]
        if len(set(ids)) != len(ids):
            problems.append("duplicate stratum ids")
        if not self.strata:
            problems.append("scene has no strata")
        known = set(ids)
        for s in self.strata:
            if s.id not in self.fields:
                problems.append(f"stratum {s.id!r} has no field")
            for b in s.boundary_ids:
                if b not in known:
                    problems.append(
                        f"stratum {s.id!r} declares unknown boundary {b!r}")
                elif self.stratum(b).dim >= s.dim:
                    problems.append(
                        f"boundary {b!r} of {s.id!r} is not lower-dimensional")
            if isinstance(s.cell, GraphCell):
                if sorted(s.cell.perm) != list(range(self.n)):
                    problems.append(f"stratum {s.id!r}: bad permutation")
                problems.extend(self._closure_check(s, tol))
        problems.extend(self._disjointness_check())
        return problems

    def _closure_check(self, s: Stratum, tol: float) -> list[str]:
        """Frontier sample points must land on declared boundary strata."""
        out = []
        try:
            frontier = geometry.graph_cell_frontier(s.cell, self.box)
        except Exception:
            return out
        if frontier.is_empty:
            return out
        boundary = self.descriptor_for(s.boundary_ids) \
            if s.boundary_ids else EMPTY_SET
        for piece in frontier.pieces:
            x = piece.point
            if boundary.is_empty:
                out.append(f"stratification not closed: frontier point "
                           f"{tuple(round(float(v), 6) for v in x)} of "
                           f"{s.id!r} has no boundary stratum")
                continue
            d = geometry.set_distance(boundary, x, box=self.box)
            if d.up > 1e-4:
                out.append(f"stratification not closed: frontier point of "
                           f"{s.id!r} misses its declared boundary by "
                           f"{d.up:.2e}")
        return out

    def _disjointness_check(self) -> list[str]:
        out = []
        for s in self.strata:
            try:
                params = geometry.stratum_samples(s.cell, 16, self.box)
            except Exception:
                continue
            for other in self.strata:
                if other.id == s.id:
                    continue
                for u in params[:8]:
                    x = (s.cell.point if isinstance(s.cell, PointCell)
                         else s.cell.embed(u))
                    if geometry.contains(other.cell, x, 1e-9) == "inside":
                        out.append(f"strata {s.id!r} and {other.id!r} overlap")
                        break
                else:
                    continue
                break
        return out


# ---------------------------------------------------------------------------
# extension terms


class PointGlueTerm:
    """Jet polynomial at an isolated point times a ball cutoff."""

    def __init__(self, stratum_id: str, jet: PointJet, omega: CutoffFn):
        self.stratum_id = stratum_id
        self.jet = jet
        self.omega = omega
        self.center = np.asarray([float(v) for v in jet.base])

    def __call__(self, x) -> float:
        w = self.omega(np.asarray(x, dtype=float))
        if w == 0.0:
            return 0.0
        offset = [float(v) - c for v, c in zip(x, self.center)]
        return float(jet_eval(self.jet, offset)) * w

    def trace(self) -> dict:
        return {"kind": "point", "stratum": self.stratum_id,
                "eta": self.omega.spec.eta,
                "cutoff": {"eta": self.omega.spec.eta,
                           "q": self.omega.spec.q},
                "hash": _term_hash(self.jet.coeffs)}


class CellTerm:
    """Normal-degree-p polynomial of a graph cell's field, cut off inside
    a cone neighborhood of the cell relative to the rest of the scene."""

    def __init__(self, stratum_id: str, cell: GraphCell,
                 normal_coeffs: Mapping, omega: CutoffFn, eta: float):
        self.stratum_id = stratum_id
        self.cell = cell
        self.normal_coeffs = dict(normal_coeffs)
        self.omega = omega
        self.eta = eta
        self.leaks = 0

    def local_value(self, u, w_offsets) -> float:
        total = 0.0
        for beta, fn in self.normal_coeffs.items():
            c = float(_eval_coeff(fn, u))
            if c == 0.0:
                continue
            term = c / mi_factorial(beta)
            for off, k in zip(w_offsets, beta):
                if k:
                    term *= off ** k
            total += term
        return total

    def __call__(self, x) -> float:
        w = self.omega(np.asarray(x, dtype=float))
        if w == 0.0:
            return 0.0
        m = self.cell.intrinsic_dim
        y = self.cell.to_internal(x)
        u, wp = tuple(float(v) for v in y[:m]), y[m:]
        if open_cell_contains(self.cell.base, u, 1e-12) == "outside":
            self.leaks += 1          # support was validated; treat as zero
            return 0.0
        try:
            offs = [float(wi) - float(expr.evaluate(phi, u))
                    for wi, phi in zip(wp, self.cell.graph)]
        except SingularPoint:
            self.leaks += 1
            return 0.0
        return self.local_value(u, offs) * w

    def trace(self) -> dict:
        return {"kind": "cell", "stratum": self.stratum_id, "eta": self.eta,
                "cutoff": {"eta": self.omega.spec.eta,
                           "q": self.omega.spec.q},
                "hash": _term_hash(sorted(self.normal_coeffs))}


def _term_hash(payload) -> str:
    blob = json.dumps(repr(payload), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class ExtensionFn:
    """Sum of cutoff-localized terms plus an optional sub-extension of the
    lower-dimensional skeleton.  Total on R^n; derivatives are sampled by
    finite differences."""

    def __init__(self, n: int, terms: Sequence, sub: Optional["ExtensionFn"],
                 label: str = ""):
        self.n = n
        self.terms = list(terms)
        self.sub = sub
        self.label = label

    def __call__(self, x) -> float:
        total = self.sub(x) if self.sub is not None else 0.0
        for t in self.terms:
            total += t(x)
        return float(total)

    def derivative(self, x, alpha, h: float = 1e-4) -> float:
        val, _ = verify.finite_difference(self.__call__, alpha, x, h)
        return val

    def assembly_trace(self) -> list[dict]:
        out = [t.trace() for t in self.terms]
        if self.sub is not None:
            out.extend(self.sub.assembly_trace())
        return out

    @property
    def leak_count(self) -> int:
        own = sum(getattr(t, "leaks", 0) for t in self.terms)
        return own + (self.sub.leak_count if self.sub else 0)


# ---------------------------------------------------------------------------
# field shifting (graph cell straightened onto its parameter plane)


def shift_field(fld: FieldSpec, cell: GraphCell) -> FieldSpec:
    """Field over the flattened cell ``D x {0}``: composing each jet of the
    original field with the jet of the straightening map
    ``(u, w) -> (u, w + phi(u))``.  Coefficients become callables of ``u``
    (exact at rational parameters)."""
    if not isinstance(cell, GraphCell):
        raise StratificationInvalid("shift_field needs a graph cell")
    n, p = fld.n, fld.p
    m = cell.intrinsic_dim
    cache: dict = {}

    def shifted_jet(u: tuple) -> PointJet:
        jet = cache.get(u)
        if jet is not None:
            return jet
        phi_vals = tuple(expr.evaluate(phi, u) for phi in cell.graph)
        base_src = tuple(u) + phi_vals
        h_jet = fld.jet_at(u, base_src)
        inner = []
        flat_base = tuple(u) + tuple(0 * v for v in phi_vals)
        for i in range(m):
            coeffs = {a: Fraction(0) for a in multi_indices(n, p)}
            coeffs[(0,) * n] = u[i]
            e_i = tuple(1 if j == i else 0 for j in range(n))
            coeffs[e_i] = Fraction(1)
            inner.append(PointJet(n, p, flat_base, coeffs))
        for j, phi in enumerate(cell.graph):
            tj = taylor_jet(phi, p, u)
            coeffs = {a: Fraction(0) for a in multi_indices(n, p)}
            for a_m, c in tj.coeffs.items():
                coeffs[tuple(a_m) + (0,) * (n - m)] = c
            e_w = tuple(1 if i == m + j else 0 for i in range(n))
            coeffs[e_w] = coeffs[e_w] + 1
            inner.append(PointJet(n, p, flat_base, coeffs))
        jet = jet_compose(h_jet, inner)
        cache[u] = jet
        return jet

    def make_coeff(alpha):
        return lambda u: shifted_jet(tuple(u)).coeffs[alpha]

    coeffs = {alpha: make_coeff(alpha) for alpha in multi_indices(n, p)}
    return FieldSpec(n, p, fld.stratum_id + "/shifted", fld.param_arity,
                     coeffs)


def check_stratum_consistency(fld: FieldSpec, cell: GraphCell,
                              samples: Sequence, tol: float = 1e-5) -> float:
    """Tangential-derivative compatibility of a field over a graph cell.

    Over a flat slice the identity is symbolic: differentiating the
    coefficient function along the parameter reproduces the stored mixed
    coefficient.  Over a curved cell it holds for the field shifted onto
    the parameter plane, whose coefficients are exact callables, so the
    tangential derivative is sampled by finite differences instead.
    Returns the worst relative residual; raises
    :class:`~whitney.errors.ConsistencyViolation` beyond ``tol``.
    """
    from .errors import ConsistencyViolation
    from .jets import check_field_consistency
    m = cell.intrinsic_dim
    curved = any(g.root.op != "const" for g in cell.graph)
    if not curved:
        return check_field_consistency(fld, m, samples, tol)
    shifted = shift_field(fld, cell)
    worst = 0.0
    for beta in multi_indices(fld.n - m, fld.p):
        key0 = (0,) * m + beta
        fn0 = shifted.coeffs[key0]
        g0 = lambda u: float(fn0(tuple(u)))
        for alpha in multi_indices(m, fld.p - mi_order(beta)):
            if mi_order(alpha) == 0:
                continue
            stored = shifted.coeffs[tuple(alpha) + beta]
            for u in samples:
                got, _ = verify.finite_difference(g0, alpha, u, 1e-3)
                want = float(stored(tuple(u)))
                resid = abs(got - want) / (1.0 + abs(want))
                worst = max(worst, resid)
                if resid > tol:
                    raise ConsistencyViolation(
                        f"stratum {fld.stratum_id!r}: shifted tangential "
                        f"derivative {tuple(alpha)} of normal coefficient "
                        f"{tuple(beta)} deviates by {resid:.3e} at u={tuple(u)}")
    return worst


# ---------------------------------------------------------------------------
# Taylor-data subtraction


def subtract_taylor(fields: Mapping[str, FieldSpec], scene: Scene,
                    g: ExtensionFn, h: float = 1e-4
                    ) -> dict[str, FieldSpec]:
    """New field family with coefficients ``F^alpha - D^alpha g`` sampled
    along every stratum.  Where ``g`` already realizes the field the
    result is numerically flat."""
    out = {}
    for stratum in scene.strata:
        fld = fields[stratum.id]
        cell = stratum.cell
        coeffs = {}
        for alpha in multi_indices(scene.n, scene.p):
            coeffs[alpha] = _subtracted_coeff(fld.coeffs[alpha], cell,
                                              alpha, g, scene.n, h)
        out[stratum.id] = FieldSpec(scene.n, scene.p, fld.stratum_id,
                                    fld.param_arity, coeffs)
    return out


def _subtracted_coeff(orig, cell, alpha_int, g: ExtensionFn, n: int,
                      h: float) -> Callable:
    if isinstance(cell, PointCell):
        alpha_amb = tuple(alpha_int)
        embed = lambda u: tuple(float(v) for v in cell.point)
    else:
        amb = [0] * n
        for i, k in enumerate(alpha_int):
            amb[cell.perm[i]] = k
        alpha_amb = tuple(amb)
        embed = lambda u: tuple(float(v) for v in cell.embed(u))

    def fn(u):
        x = embed(u)
        base = float(_eval_coeff(orig, u))
        d, _ = verify.finite_difference(g, alpha_amb, x, h)
        return base - d

    return fn


# ---------------------------------------------------------------------------
# single-cell extension


def extend_on_cell(fld: FieldSpec, stratum: Stratum, z_desc: SetDescriptor,
                   scene: Scene, *, flat_declared: bool,
                   eta0: float = 0.5, max_halvings: int = 20,
                   leak_samples: int = 2000, seed: int = 0) -> CellTerm:
    """Extension term for one graph cell whose field vanishes on the rest
    of the scene: the normal-degree-p polynomial of the cell's jets,
    multiplied by a cone-neighborhood cutoff.

    The support ratio starts at ``eta0`` and is halved until the sampled
    cone neighborhood stays inside the cell's parameter slab; exceeding
    ``max_halvings`` raises :class:`SupportLeak`.
    """
    if not flat_declared:
        raise FlatnessDeclarationMissing(
            f"field on {stratum.id!r} must be declared flat off the cell")
    cell = stratum.cell
    if not isinstance(cell, GraphCell):
        raise StratificationInvalid("extend_on_cell needs a graph cell")
    m = cell.intrinsic_dim
    normal = {}
    for beta in multi_indices(scene.n - m, scene.p):
        key = (0,) * m + beta
        normal[beta] = fld.coeffs[key]

    eta = eta0
    for _ in range(max_halvings + 1):
        if _support_fits(cell, z_desc, scene, eta, leak_samples, seed):
            break
        eta /= 2.0
    else:
        raise SupportLeak(
            f"cone support of {stratum.id!r} escapes its parameter slab "
            f"even at eta={eta:.2e}")

    spec = CutoffSpec(geometry.descriptor_of(cell), z_desc, eta, scene.q,
                      box=scene.box)
    omega = build_cutoff(spec)
    return CellTerm(stratum.id, cell, normal, omega, eta)


def _support_fits(cell: GraphCell, z_desc: SetDescriptor, scene: Scene,
                  eta: float, n_samples: int, seed: int) -> bool:
    """Sample certificate: no point certified inside the eta-cone may
    project outside the closed parameter domain."""
    rng = np.random.default_rng(seed)
    w_desc = geometry.descriptor_of(cell)
    lo, hi = cutoff_mod._sample_box(w_desc, z_desc, scene.box)
    X = lo + (hi - lo) * rng.random((n_samples, scene.n))
    extra = _frontier_shells(cell, rng, scene)
    if extra is not None:
        X = np.vstack([X, extra])
    bw = cutoff_mod._BatchBracket(w_desc, scene.box)
    bz = cutoff_mod._BatchBracket(z_desc, scene.box)
    member, _ = cutoff_mod.cone_membership_batch(bw, bz, eta, X)
    m = cell.intrinsic_dim
    for x in X[member == cutoff_mod.IN]:
        u = cell.to_internal(x)[:m]
        if open_cell_contains(cell.base, u, 1e-9) == "outside":
            return False
    return True


def _frontier_shells(cell: GraphCell, rng, scene) -> Optional[np.ndarray]:
    """Extra leak-check samples in shrinking shells around the cell's
    frontier, where cone support violations concentrate."""
    try:
        frontier = geometry.graph_cell_frontier(cell, scene.box)
    except Exception:
        return None
    pts = [np.asarray([float(v) for v in p.point])
           for p in frontier.pieces if isinstance(p, PointCell)]
    if not pts:
        return None
    out = []
    for c in pts:
        for j in range(2, 14):
            r = 2.0 ** (-j)
            shell = c + r * (rng.random((16, scene.n)) - 0.5) * 2.0
            out.append(shell)
    return np.vstack(out)


# ---------------------------------------------------------------------------
# the induction driver


def extend_field(scene: Scene, *, seed: int = 0,
                 skip_skeleton_subtraction: bool = False) -> ExtensionFn:
    """Global extension of a scene's jet field, by induction on dimension.

    ``skip_skeleton_subtraction`` disables the Taylor-data subtraction
    before the top-dimensional terms are built; it exists so tests can
    demonstrate that the subtraction is load-bearing, and must stay False
    for correct output.
    """
    problems = scene.validate()
    if problems:
        raise StratificationInvalid("; ".join(problems))
    return _extend(scene, seed, skip_skeleton_subtraction)


def _extend(scene: Scene, seed: int, skip_sub: bool) -> ExtensionFn:
    top_dim = scene.dim
    if top_dim == 0:
        return _glue_points(scene)

    skeleton_ids = [s.id for s in scene.strata if s.dim < top_dim]
    top = [s for s in scene.strata if s.dim == top_dim]
    sub = None
    fields = dict(scene.fields)
    if skeleton_ids:
        sub = _extend(scene.restrict(skeleton_ids), seed, skip_sub)
        if not skip_sub:
            fields = subtract_taylor(fields, scene, sub)

    terms = []
    for stratum in top:
        other_ids = [s.id for s in scene.strata if s.id != stratum.id]
        z_desc = (scene.descriptor_for(other_ids) if other_ids
                  else EMPTY_SET)
        terms.append(extend_on_cell(fields[stratum.id], stratum, z_desc,
                                    scene, flat_declared=True, seed=seed))
    return ExtensionFn(scene.n, terms, sub, label=f"dim<={top_dim}")


def _glue_points(scene: Scene) -> ExtensionFn:
    pts = []
    for s in scene.strata:
        if not isinstance(s.cell, PointCell):
            raise StratificationInvalid(
                "dimension-0 scene may only contain point strata")
        pts.append(np.asarray([float(v) for v in s.cell.point]))
    if len(pts) > 1:
        gap = min(float(np.linalg.norm(a - b))
                  for i, a in enumerate(pts) for b in pts[i + 1:])
    else:
        gap = 4.0
    eta = gap / 4.0   # supports of radius eta stay pairwise disjoint
    terms = []
    for s in scene.strata:
        fld = scene.fields[s.id]
        jet = fld.jet_at((0,), s.cell.point)
        spec = CutoffSpec(geometry.descriptor_of(s.cell), EMPTY_SET, eta,
                          scene.q, box=scene.box)
        omega = build_cutoff(spec)
        terms.append(PointGlueTerm(s.id, jet, omega))
    return ExtensionFn(scene.n, terms, None, label="dim=0")


# ---------------------------------------------------------------------------
# flatness rate probe


@dataclass
class FlatnessReport:
    per_kappa: dict                 # kappa -> list of normalized values
    flat: dict                      # kappa -> bool
    theta: float
    cone_ratio_max: float

    @property
    def all_flat(self) -> bool:
        return all(self.flat.values())


def flatness_rate_probe(h: Callable, z_desc: SetDescriptor,
                        cell: GraphCell, cone_constant: float, p: int,
                        points: Sequence, theta: float = 1e-2,
                        box: float = geometry.DEFAULT_BOX_HALFWIDTH,
                        kappas: Optional[Sequence] = None) -> FlatnessReport:
    """Normalized derivative decay of ``h`` along an approach sequence:
    for each |kappa| <= p the values ``|D^kappa h(x_j)| * d(x_j,Z)^(|kappa|-p)``
    must eventually fall below ``theta``.

    The sequence must approach within a cone ``d(x, cell) <= C d(x, Z)``.
    Points whose two distances agree (the approach hugging Z, with the
    nearest cell point realized through the target itself) satisfy the
    cone condition for every admissible constant >= 1, so the membership
    guard uses ``max(C, 1)`` with a small relative slack rather than
    rejecting such radial approaches.
    """
    n = len(points[0])
    w_desc = geometry.descriptor_of(cell)
    c_eff = max(cone_constant, 1.0) * (1.0 + 1e-6)
    ratio_max = 0.0
    dzs = []
    for x in points:
        dw = geometry.set_distance(w_desc, x, box=box)
        dz = geometry.set_distance(z_desc, x, box=box)
        if dz.up <= 0:
            raise SequenceLeavesCone("sequence point lies on Z")
        ratio = dw.up / max(dz.lo, 1e-300)
        ratio_max = max(ratio_max, ratio)
        if ratio > c_eff:
            raise SequenceLeavesCone(
                f"point {tuple(x)} has d(x,cell)/d(x,Z) = {ratio:.3f} "
                f"> {c_eff:.3f}")
        dzs.append(dz.mid)

    if kappas is None:
        kappas = [k for k in multi_indices(n, p)]
    per_kappa, flat = {}, {}
    for kappa in kappas:
        vals = []
        for x, dz in zip(points, dzs):
            step = max(min(1e-3, dz / 20.0), 1e-8)
            d, _ = verify.finite_difference(h, kappa, x, step)
            vals.append(abs(d) * dz ** (mi_order(kappa) - p))
        per_kappa[tuple(kappa)] = vals
        tail = vals[max(0, len(vals) - max(3, len(vals) // 3)):]
        flat[tuple(kappa)] = max(tail) < theta
    return FlatnessReport(per_kappa, flat, theta, ratio_max)
