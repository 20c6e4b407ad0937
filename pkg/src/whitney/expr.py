"""Closed-form expression trees with exact symbolic derivatives.

An :class:`ExprFn` is a scalar function of ``arity`` real variables built
from rational/float constants, variables, field arithmetic, integer powers,
``sqrt``, ``abs``, binary ``min``/``max`` and guarded piecewise definitions.
These trees represent everything the engine treats as "given in closed
form": cell walls, graph maps, jet coefficient functions and cutoff
building blocks.

Two conventions matter throughout:

* Constants parsed from ``"p/q"`` strings or ints stay exact
  (:class:`fractions.Fraction`); evaluating at a rational point then yields
  an exact rational, which the jet-algebra tests rely on.
* Kinks and poles (abs/min/max ties, zero denominators, sqrt at 0,
  piecewise guard boundaries) are *errors* within a tolerance
  ``tau_sing``, never silently resolved.  Derivatives of abs/min/max
  select the active branch and keep the guard, so differentiation of a
  derived tree errors on the ridge too.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

from .errors import ArityMismatch, SingularPoint, UnsupportedNode

Number = Union[int, float, Fraction]

TAU_SING = 1e-9

_LEAF_OPS = ("const", "var")
_BINARY_OPS = ("add", "sub", "mul", "div", "min", "max")
_UNARY_OPS = ("sqrt", "abs")


@dataclass(frozen=True)
class Node:
    """One expression node.  ``payload`` holds the constant value, the
    variable index or the integer exponent depending on ``op``."""

    op: str
    payload: object = None
    args: tuple["Node", ...] = ()


def const(value: Number) -> Node:
    if isinstance(value, str):
        value = Fraction(value)
    if isinstance(value, int):
        value = Fraction(value)
    return Node("const", value)


def var(index: int) -> Node:
    if index < 0:
        raise ArityMismatch(f"variable index {index} out of range")
    return Node("var", index)


ZERO = const(0)
ONE = const(1)


def _is_const(n: Node, value=None) -> bool:
    if n.op != "const":
        return False
    return value is None or n.payload == value


def add(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b):
        return const(a.payload + b.payload)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    return Node("add", None, (a, b))


def sub(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b):
        return const(a.payload - b.payload)
    if _is_const(b, 0):
        return a
    return Node("sub", None, (a, b))


def mul(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b):
        return const(a.payload * b.payload)
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    return Node("mul", None, (a, b))


def div(a: Node, b: Node) -> Node:
    if _is_const(a, 0):
        return ZERO
    if _is_const(b, 1):
        return a
    if _is_const(a) and _is_const(b) and b.payload != 0:
        return const(Fraction(a.payload) / Fraction(b.payload))
    return Node("div", None, (a, b))


def pow_(base: Node, exponent: int) -> Node:
    if not isinstance(exponent, int) or exponent < 0:
        raise UnsupportedNode("pow exponent must be a nonnegative integer")
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if _is_const(base):
        return const(base.payload ** exponent)
    return Node("pow", exponent, (base,))


def sqrt_(a: Node) -> Node:
    return Node("sqrt", None, (a,))


def abs_(a: Node) -> Node:
    return Node("abs", None, (a,))


def min_(a: Node, b: Node) -> Node:
    return Node("min", None, (a, b))


def max_(a: Node, b: Node) -> Node:
    return Node("max", None, (a, b))


def piecewise(branches) -> Node:
    """``branches`` is a sequence of (guard, expr) Node pairs; a branch is
    active where its guard is strictly positive, and exactly one guard may
    be positive at any queried point."""
    flat = []
    for guard, body in branches:
        flat.append(guard)
        flat.append(body)
    return Node("piecewise", None, tuple(flat))


@dataclass(frozen=True)
class ExprFn:
    arity: int
    root: Node

    def __post_init__(self):
        if self.arity < 1:
            raise ArityMismatch("arity must be >= 1")
        top = _max_var_index(self.root)
        if top >= self.arity:
            raise ArityMismatch(
                f"variable index {top} exceeds arity {self.arity}")

    def __call__(self, x, tau_sing: float = TAU_SING):
        return evaluate(self, x, tau_sing)

    # Arithmetic sugar so jets and tests can combine expressions directly.
    def _wrap(self, other) -> "ExprFn":
        if isinstance(other, ExprFn):
            if other.arity != self.arity:
                raise ArityMismatch("mixed arity in expression arithmetic")
            return other
        return ExprFn(self.arity, const(other))

    def __add__(self, other):
        other = self._wrap(other)
        return ExprFn(self.arity, add(self.root, other.root))

    __radd__ = __add__

    def __sub__(self, other):
        other = self._wrap(other)
        return ExprFn(self.arity, sub(self.root, other.root))

    def __rsub__(self, other):
        other = self._wrap(other)
        return ExprFn(self.arity, sub(other.root, self.root))

    def __mul__(self, other):
        other = self._wrap(other)
        return ExprFn(self.arity, mul(self.root, other.root))

    __rmul__ = __mul__

    def __neg__(self):
        return ExprFn(self.arity, sub(ZERO, self.root))


def _max_var_index(node: Node) -> int:
    if node.op == "var":
        return node.payload
    if node.op == "const":
        return -1
    return max((_max_var_index(a) for a in node.args), default=-1)


def constant_fn(value: Number, arity: int = 1) -> ExprFn:
    return ExprFn(arity, const(value))


def coordinate(index: int, arity: int) -> ExprFn:
    return ExprFn(arity, var(index))


# ---------------------------------------------------------------------------
# evaluation


def evaluate(f: ExprFn, x, tau_sing: float = TAU_SING):
    """Value of ``f`` at the point ``x`` (sequence of numbers).

    Exact when all constants and coordinates are rational and the tree is
    sqrt-free.  Raises :class:`SingularPoint` within ``tau_sing`` of any
    declared singular locus.
    """
    if len(x) != f.arity:
        raise ArityMismatch(f"expected {f.arity} coordinates, got {len(x)}")
    return _eval(f.root, tuple(x), tau_sing)


def _eval(node: Node, x, tau):
    op = node.op
    if op == "const":
        return node.payload
    if op == "var":
        return x[node.payload]
    if op == "add":
        return _eval(node.args[0], x, tau) + _eval(node.args[1], x, tau)
    if op == "sub":
        return _eval(node.args[0], x, tau) - _eval(node.args[1], x, tau)
    if op == "mul":
        return _eval(node.args[0], x, tau) * _eval(node.args[1], x, tau)
    if op == "div":
        num = _eval(node.args[0], x, tau)
        den = _eval(node.args[1], x, tau)
        if abs(den) <= tau:
            raise SingularPoint(f"denominator {den} within {tau} of zero")
        return num / den
    if op == "pow":
        return _eval(node.args[0], x, tau) ** node.payload
    if op == "sqrt":
        a = _eval(node.args[0], x, tau)
        if a <= tau:
            raise SingularPoint(f"sqrt argument {a} within {tau} of zero")
        if isinstance(a, Fraction):
            r = _exact_sqrt(a)
            if r is not None:
                return r
        return math.sqrt(a)
    if op == "abs":
        a = _eval(node.args[0], x, tau)
        if abs(a) <= tau:
            raise SingularPoint("abs argument on its kink")
        return a if a > 0 else -a
    if op in ("min", "max"):
        a = _eval(node.args[0], x, tau)
        b = _eval(node.args[1], x, tau)
        if abs(a - b) <= tau:
            raise SingularPoint(f"{op} arguments tie within {tau}")
        if op == "min":
            return a if a < b else b
        return a if a > b else b
    if op == "piecewise":
        active = None
        for i in range(0, len(node.args), 2):
            g = _eval(node.args[i], x, tau)
            if abs(g) <= tau:
                raise SingularPoint("piecewise guard boundary")
            if g > 0:
                if active is not None:
                    raise SingularPoint("piecewise guards overlap at point")
                active = node.args[i + 1]
        if active is None:
            raise SingularPoint("no piecewise guard active at point")
        return _eval(active, x, tau)
    raise UnsupportedNode(f"unknown node op {op!r}")


def _exact_sqrt(a: Fraction):
    pn = math.isqrt(a.numerator)
    pd = math.isqrt(a.denominator)
    if pn * pn == a.numerator and pd * pd == a.denominator:
        return Fraction(pn, pd)
    return None


# ---------------------------------------------------------------------------
# differentiation

_diff_cache: dict = {}


def _d(node: Node, i: int) -> Node:
    key = (node, i)
    hit = _diff_cache.get(key)
    if hit is not None:
        return hit
    out = _d_raw(node, i)
    _diff_cache[key] = out
    return out


def _d_raw(node: Node, i: int) -> Node:
    op = node.op
    if op == "const":
        return ZERO
    if op == "var":
        return ONE if node.payload == i else ZERO
    if op == "add":
        return add(_d(node.args[0], i), _d(node.args[1], i))
    if op == "sub":
        return sub(_d(node.args[0], i), _d(node.args[1], i))
    if op == "mul":
        a, b = node.args
        return add(mul(_d(a, i), b), mul(a, _d(b, i)))
    if op == "div":
        a, b = node.args
        return div(sub(mul(_d(a, i), b), mul(a, _d(b, i))), mul(b, b))
    if op == "pow":
        (a,) = node.args
        k = node.payload
        return mul(mul(const(k), pow_(a, k - 1)), _d(a, i))
    if op == "sqrt":
        (a,) = node.args
        return div(_d(a, i), mul(const(2), sqrt_(a)))
    if op == "abs":
        # derivative of the active branch; guard keeps the kink an error
        (a,) = node.args
        da = _d(a, i)
        return piecewise([(a, da), (sub(ZERO, a), sub(ZERO, da))])
    if op == "min":
        a, b = node.args
        return piecewise([(sub(b, a), _d(a, i)), (sub(a, b), _d(b, i))])
    if op == "max":
        a, b = node.args
        return piecewise([(sub(a, b), _d(a, i)), (sub(b, a), _d(b, i))])
    if op == "piecewise":
        branches = []
        for j in range(0, len(node.args), 2):
            branches.append((node.args[j], _d(node.args[j + 1], i)))
        return piecewise(branches)
    raise UnsupportedNode(f"no derivative rule for {op!r}")


def differentiate(f: ExprFn, alpha) -> ExprFn:
    """Exact partial derivative of multi-index ``alpha`` (sequence of
    nonnegative ints of length ``arity``)."""
    if len(alpha) != f.arity:
        raise ArityMismatch("multi-index length must equal arity")
    root = f.root
    for i, k in enumerate(alpha):
        for _ in range(k):
            root = _d(root, i)
    return ExprFn(f.arity, root)


# ---------------------------------------------------------------------------
# substitution (used for composing explicit functions in oracles)


def substitute(f: ExprFn, inner: list[ExprFn]) -> ExprFn:
    """Replace every variable of ``f`` by the corresponding expression in
    ``inner``; all inner expressions must share one arity."""
    if len(inner) != f.arity:
        raise ArityMismatch("need one inner expression per variable of f")
    arity = inner[0].arity
    if any(g.arity != arity for g in inner):
        raise ArityMismatch("inner expressions disagree on arity")
    roots = [g.root for g in inner]

    def walk(node: Node) -> Node:
        if node.op == "var":
            return roots[node.payload]
        if node.op == "const":
            return node
        return Node(node.op, node.payload, tuple(walk(a) for a in node.args))

    return ExprFn(arity, walk(f.root))


# ---------------------------------------------------------------------------
# serialization: nested arrays, e.g. ["add", ["var", 0], ["const", "3/2"]]

_PARSE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div,
                 "min": min_, "max": max_}


def node_from_json(obj) -> Node:
    if not isinstance(obj, list) or not obj:
        raise UnsupportedNode(f"expression must be a nonempty array: {obj!r}")
    op = obj[0]
    if op == "const":
        return const(_number_from_json(obj[1]))
    if op == "var":
        return var(int(obj[1]))
    if op == "neg":
        return sub(ZERO, node_from_json(obj[1]))
    if op in _PARSE_BINARY:
        return _PARSE_BINARY[op](node_from_json(obj[1]), node_from_json(obj[2]))
    if op == "pow":
        return pow_(node_from_json(obj[1]), int(obj[2]))
    if op == "sqrt":
        return sqrt_(node_from_json(obj[1]))
    if op == "abs":
        return abs_(node_from_json(obj[1]))
    if op == "piecewise":
        branches = [(node_from_json(b[0]), node_from_json(b[1]))
                    for b in obj[1:]]
        return piecewise(branches)
    raise UnsupportedNode(f"unknown expression op {op!r}")


def _number_from_json(v) -> Number:
    if isinstance(v, bool):
        raise UnsupportedNode("booleans are not numbers")
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, float):
        return v
    if isinstance(v, str):
        return Fraction(v)
    raise UnsupportedNode(f"bad numeric literal {v!r}")


def number_to_json(v: Number):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else int(v)
    return v


def node_to_json(node: Node):
    op = node.op
    if op == "const":
        return ["const", number_to_json(node.payload)]
    if op == "var":
        return ["var", node.payload]
    if op == "pow":
        return ["pow", node_to_json(node.args[0]), node.payload]
    if op == "piecewise":
        out = ["piecewise"]
        for i in range(0, len(node.args), 2):
            out.append([node_to_json(node.args[i]),
                        node_to_json(node.args[i + 1])])
        return out
    return [op] + [node_to_json(a) for a in node.args]


def exprfn_from_json(obj, arity: int) -> ExprFn:
    return ExprFn(arity, node_from_json(obj))


def exprfn_to_json(f: ExprFn):
    return node_to_json(f.root)


# ---------------------------------------------------------------------------
# convenience builders for tests and bundled scenes


def polynomial(arity: int, terms: dict) -> ExprFn:
    """Build sum of ``coeff * x^alpha`` from ``{alpha_tuple: coeff}``."""
    root = ZERO
    for alpha, c in sorted(terms.items()):
        term = const(c)
        for i, k in enumerate(alpha):
            term = mul(term, pow_(var(i), k))
        root = add(root, term)
    return ExprFn(arity, root)
