"""Truncated-jet algebra: order-p Taylor polynomials at points, fields of
jets over strata, and the compatibility machinery between them.

A :class:`PointJet` stores *derivative values* ``coeffs[alpha] = F^alpha``;
the polynomial it represents is ``sum (1/alpha!) F^alpha X^alpha`` where
``X`` is the offset from the base point.  Multiplication is full polynomial
multiplication followed by truncation to total degree <= p, which makes
jets of a fixed order a commutative ring.  All operations stay exact when
coefficients and points are rational.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence, Union

from . import expr
from .errors import (ArityMismatch, BaseMismatch, ConsistencyViolation,
                     NotAGraphCell, ShapeMismatch, UnknownStratum)
from .expr import ExprFn

MultiIndex = tuple  # of nonnegative ints

TAU_BASE = 1e-12


def mi_order(alpha: MultiIndex) -> int:
    return sum(alpha)


def mi_factorial(alpha: MultiIndex) -> int:
    out = 1
    for k in alpha:
        out *= math.factorial(k)
    return out


def mi_add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def mi_key(alpha: MultiIndex):
    """Graded-lexicographic sort key: total order first, then exponents."""
    return (sum(alpha), alpha)


def multi_indices(n: int, p: int) -> list[MultiIndex]:
    """All multi-indices of length ``n`` with total order <= ``p``, in
    graded-lex order (the serialization order)."""
    out = [()]
    for _ in range(n):
        out = [prev + (k,) for prev in out for k in range(p + 1 - sum(prev))]
    out.sort(key=mi_key)
    return out


def mi_to_string(alpha: MultiIndex) -> str:
    return ",".join(str(k) for k in alpha)


def mi_from_string(s: str) -> MultiIndex:
    return tuple(int(part) for part in s.split(","))


def _inv_factorial(alpha: MultiIndex, sample):
    """1/alpha! as a Fraction when the surrounding arithmetic is exact."""
    f = mi_factorial(alpha)
    if isinstance(sample, float):
        return 1.0 / f
    return Fraction(1, f)


@dataclass(frozen=True)
class PointJet:
    """One jet: order-``p`` polynomial data anchored at ``base``."""

    n: int
    p: int
    base: tuple
    coeffs: Mapping[MultiIndex, Union[int, float, Fraction]]

    def __post_init__(self):
        expected = multi_indices(self.n, self.p)
        if len(self.base) != self.n:
            raise ShapeMismatch("base point dimension != n")
        if set(self.coeffs) != set(expected):
            raise ShapeMismatch(
                f"jet needs exactly the {len(expected)} coefficients of "
                f"order <= {self.p}")

    def __add__(self, other):
        return jet_add(self, other)

    def __sub__(self, other):
        return jet_add(self, jet_scale(other, -1))

    def __mul__(self, other):
        return jet_mul(self, other)

    def __call__(self, offset):
        return jet_eval(self, offset)

    @property
    def constant_term(self):
        return self.coeffs[(0,) * self.n]


def zero_jet(n: int, p: int, base) -> PointJet:
    return PointJet(n, p, tuple(base),
                    {a: Fraction(0) for a in multi_indices(n, p)})


def jet_from_coeffs(n, p, base, coeffs) -> PointJet:
    full = {a: Fraction(0) for a in multi_indices(n, p)}
    for a, c in coeffs.items():
        full[tuple(a)] = c
    return PointJet(n, p, tuple(base), full)


def _check_compatible(a: PointJet, b: PointJet):
    if a.n != b.n or a.p != b.p:
        raise ShapeMismatch(f"jet shapes differ: ({a.n},{a.p}) vs ({b.n},{b.p})")
    for x, y in zip(a.base, b.base):
        exact = not (isinstance(x, float) or isinstance(y, float))
        if exact:
            if x != y:
                raise BaseMismatch("jet base points differ")
        elif abs(x - y) > TAU_BASE:
            raise BaseMismatch("jet base points differ beyond tolerance")


def jet_add(a: PointJet, b: PointJet) -> PointJet:
    _check_compatible(a, b)
    return PointJet(a.n, a.p, a.base,
                    {k: a.coeffs[k] + b.coeffs[k] for k in a.coeffs})


def jet_scale(a: PointJet, c) -> PointJet:
    return PointJet(a.n, a.p, a.base, {k: c * v for k, v in a.coeffs.items()})


def jet_to_monomial(a: PointJet) -> dict:
    """Plain polynomial coefficients ``c_alpha = F^alpha / alpha!``."""
    return {k: v * _inv_factorial(k, v) for k, v in a.coeffs.items()}


def jet_from_monomial(n, p, base, mono: Mapping) -> PointJet:
    coeffs = {}
    for alpha in multi_indices(n, p):
        c = mono.get(alpha, 0)
        fac = mi_factorial(alpha)
        coeffs[alpha] = c * fac
    return PointJet(n, p, tuple(base), coeffs)


def truncate_poly(mono: Mapping, n: int, p: int, base=None) -> PointJet:
    """Project a finitely supported polynomial (monomial-coefficient map)
    onto total degree <= p, returned in jet form.  Linear and idempotent."""
    base = tuple(base) if base is not None else (0,) * n
    kept = {a: c for a, c in mono.items() if sum(a) <= p}
    return jet_from_monomial(n, p, base, kept)


def poly_multiply(a: Mapping, b: Mapping) -> dict:
    """Full (untruncated) product of two monomial-coefficient maps."""
    out: dict = {}
    for ka, va in a.items():
        if va == 0:
            continue
        for kb, vb in b.items():
            if vb == 0:
                continue
            k = mi_add(ka, kb)
            out[k] = out.get(k, 0) + va * vb
    return out


def jet_mul(a: PointJet, b: PointJet) -> PointJet:
    _check_compatible(a, b)
    am, bm = jet_to_monomial(a), jet_to_monomial(b)
    out: dict = {}
    for ka, va in am.items():
        if va == 0:
            continue
        ra = a.p - sum(ka)
        for kb, vb in bm.items():
            if vb == 0 or sum(kb) > ra:
                continue
            k = mi_add(ka, kb)
            out[k] = out.get(k, 0) + va * vb
    return jet_from_monomial(a.n, a.p, a.base, out)


def jet_eval(a: PointJet, offset: Sequence):
    if len(offset) != a.n:
        raise ShapeMismatch("offset dimension != n")
    total = 0
    for alpha, c in a.coeffs.items():
        if c == 0:
            continue
        term = c * _inv_factorial(alpha, c)
        for xi, k in zip(offset, alpha):
            if k:
                term = term * xi ** k
        total = total + term
    return total


def unit_jet(n: int, p: int, base) -> PointJet:
    j = zero_jet(n, p, base)
    coeffs = dict(j.coeffs)
    coeffs[(0,) * n] = Fraction(1)
    return PointJet(n, p, tuple(base), coeffs)


def jet_permute(a: PointJet, perm: Sequence[int]) -> PointJet:
    """Reindex jet coordinates: output axis ``i`` is input axis ``perm[i]``."""
    if sorted(perm) != list(range(a.n)):
        raise ShapeMismatch("perm must be a permutation of the axes")
    base = tuple(a.base[perm[i]] for i in range(a.n))
    coeffs = {}
    for alpha, c in a.coeffs.items():
        coeffs[tuple(alpha[perm[i]] for i in range(a.n))] = c
    return PointJet(a.n, a.p, base, coeffs)


# ---------------------------------------------------------------------------
# composition


def jet_compose(h: PointJet, fs: Sequence[PointJet]) -> PointJet:
    """Substitute the jets ``fs`` (m of them, over n shared variables) into
    ``h`` (over m variables) and truncate to order p.

    ``h`` must be based at the vector of constant terms of ``fs``.  The
    inner offsets have no constant part, so their powers only raise total
    degree; powers are accumulated in graded order, each from a previously
    cached one, instead of expanding every monomial from scratch.
    """
    m = h.n
    if len(fs) != m:
        raise ShapeMismatch(f"need {m} inner jets, got {len(fs)}")
    f0 = fs[0]
    n, p = f0.n, f0.p
    if h.p != p:
        raise ShapeMismatch("inner and outer jets disagree on order")
    for f in fs[1:]:
        _check_compatible(f0, f)
    consts = tuple(f.constant_term for f in fs)
    for hb, c in zip(h.base, consts):
        exact = not (isinstance(hb, float) or isinstance(c, float))
        if (hb != c) if exact else (abs(hb - c) > TAU_BASE):
            raise BaseMismatch(
                "outer jet must be based at the inner constant terms")

    # centered inner polynomials: no constant term, total degree >= 1
    ys = []
    for f in fs:
        mono = jet_to_monomial(f)
        mono[(0,) * n] = mono[(0,) * n] - f.constant_term
        ys.append({k: v for k, v in mono.items() if v != 0 and sum(k) <= p})

    hm = jet_to_monomial(h)
    powers: dict[MultiIndex, dict] = {(0,) * m: {(0,) * n: 1}}
    out: dict = {}
    for kappa in multi_indices(m, p):
        coeff = hm.get(kappa, 0)
        pw = powers.get(kappa)
        if pw is None:
            j = max(i for i, k in enumerate(kappa) if k > 0)
            prev = kappa[:j] + (kappa[j] - 1,) + kappa[j + 1:]
            pw = _truncated_product(powers[prev], ys[j], p)
            powers[kappa] = pw
        if coeff == 0:
            continue
        for k, v in pw.items():
            out[k] = out.get(k, 0) + coeff * v
    return jet_from_monomial(n, p, f0.base, out)


def _truncated_product(a: Mapping, b: Mapping, p: int) -> dict:
    out: dict = {}
    for ka, va in a.items():
        ra = p - sum(ka)
        for kb, vb in b.items():
            if sum(kb) > ra:
                continue
            k = mi_add(ka, kb)
            out[k] = out.get(k, 0) + va * vb
    return out


# ---------------------------------------------------------------------------
# Taylor jets of explicit functions


def taylor_jet(f: ExprFn, p: int, u: Sequence) -> PointJet:
    """Jet of an explicit function at ``u``: coefficients are exact
    derivatives evaluated at ``u``.  Derivative trees are built once per
    multi-index, walking up the graded order."""
    n = f.arity
    u = tuple(u)
    derivs: dict[MultiIndex, ExprFn] = {(0,) * n: f}
    coeffs = {}
    for alpha in multi_indices(n, p):
        if alpha not in derivs:
            j = max(i for i, k in enumerate(alpha) if k > 0)
            parent = alpha[:j] + (alpha[j] - 1,) + alpha[j + 1:]
            step = tuple(1 if i == j else 0 for i in range(n))
            derivs[alpha] = expr.differentiate(derivs[parent], step)
        coeffs[alpha] = expr.evaluate(derivs[alpha], u)
    return PointJet(n, p, u, coeffs)


# ---------------------------------------------------------------------------
# fields of jets over strata

CoeffFn = Union[ExprFn, Callable]


def _eval_coeff(fn: CoeffFn, u: Sequence):
    if isinstance(fn, ExprFn):
        return expr.evaluate(fn, u)
    return fn(u)


@dataclass(frozen=True)
class FieldSpec:
    """A jet-valued field over one stratum: for every multi-index of order
    <= p (in the stratum's internal coordinate order) a coefficient
    function of the stratum parameter ``u``.

    ``param_arity`` is the arity the coefficient functions expect; point
    strata use a single dummy parameter evaluated at 0.
    """

    n: int
    p: int
    stratum_id: str
    param_arity: int
    coeffs: Mapping[MultiIndex, CoeffFn] = field(repr=False)

    def __post_init__(self):
        expected = set(multi_indices(self.n, self.p))
        if set(self.coeffs) != expected:
            raise ShapeMismatch(
                f"field over {self.stratum_id!r} must carry all "
                f"{len(expected)} coefficient functions")
        for fn in self.coeffs.values():
            if isinstance(fn, ExprFn) and fn.arity != self.param_arity:
                raise ArityMismatch(
                    "coefficient arity != stratum parameter dimension")

    def jet_at(self, u: Sequence, embedded_base: Sequence) -> PointJet:
        vals = {a: _eval_coeff(fn, u) for a, fn in self.coeffs.items()}
        return PointJet(self.n, self.p, tuple(embedded_base), vals)


def normal_coefficient_fn(fld: FieldSpec, beta: MultiIndex,
                          tangent_dim: int) -> CoeffFn:
    """Coefficient function ``u -> F^{(0, beta)}(u)`` for a graph stratum
    whose first ``tangent_dim`` internal coordinates are tangential."""
    normal_dim = fld.n - tangent_dim
    if normal_dim < 0 or len(beta) != normal_dim:
        raise NotAGraphCell("beta must index the normal coordinates")
    key = (0,) * tangent_dim + tuple(beta)
    if key not in fld.coeffs:
        raise ShapeMismatch(f"|beta| exceeds field order {fld.p}")
    return fld.coeffs[key]


def check_field_consistency(fld: FieldSpec, tangent_dim: int,
                            samples: Sequence[Sequence],
                            tol: float = 1e-7) -> float:
    """Sampled compatibility of tangential derivatives: differentiating the
    coefficient function ``F^{(0,beta)}`` along the stratum must reproduce
    the stored ``F^{(alpha,beta)}``.  Only possible (and only meaningful)
    for expression-backed coefficients; returns the worst residual and
    raises :class:`ConsistencyViolation` beyond ``tol``."""
    normal_dim = fld.n - tangent_dim
    worst = 0.0
    for beta in multi_indices(normal_dim, fld.p):
        base_fn = fld.coeffs[(0,) * tangent_dim + beta]
        if not isinstance(base_fn, ExprFn):
            continue
        for alpha in multi_indices(tangent_dim, fld.p - mi_order(beta)):
            if mi_order(alpha) == 0:
                continue
            derived = expr.differentiate(base_fn, alpha)
            stored = fld.coeffs[tuple(alpha) + beta]
            for u in samples:
                lhs = expr.evaluate(derived, u)
                rhs = _eval_coeff(stored, u)
                resid = abs(float(lhs) - float(rhs))
                scale = 1.0 + abs(float(rhs))
                worst = max(worst, resid / scale)
                if resid > tol * scale:
                    raise ConsistencyViolation(
                        f"stratum {fld.stratum_id!r}: tangential derivative "
                        f"{tuple(alpha)} of coefficient {tuple(beta)} deviates "
                        f"by {resid:.3e} at u={tuple(u)}")
    return worst


def restrict_family(family: Mapping[str, FieldSpec],
                    keep: Sequence[str]) -> dict[str, FieldSpec]:
    """Restriction of a field family to a sub-collection of strata."""
    out = {}
    for sid in keep:
        if sid not in family:
            raise UnknownStratum(f"stratum {sid!r} not in family")
        out[sid] = family[sid]
    return out


# ---------------------------------------------------------------------------
# serialization: base point plus (multi-index, coefficient) pairs in
# graded-lex order, rationals as "p/q" strings


def _num_to_json(v):
    if isinstance(v, Fraction):
        return int(v) if v.denominator == 1 else str(v)
    return v


def _num_from_json(v):
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, int):
        return Fraction(v)
    return v


def jet_to_json(a: PointJet) -> dict:
    return {
        "n": a.n, "p": a.p,
        "base": [_num_to_json(v) for v in a.base],
        "coeffs": [[list(alpha), _num_to_json(a.coeffs[alpha])]
                   for alpha in sorted(a.coeffs, key=mi_key)],
    }


def jet_from_json(obj: dict) -> PointJet:
    coeffs = {tuple(alpha): _num_from_json(c) for alpha, c in obj["coeffs"]}
    base = tuple(_num_from_json(v) for v in obj["base"])
    return PointJet(obj["n"], obj["p"], base, coeffs)
