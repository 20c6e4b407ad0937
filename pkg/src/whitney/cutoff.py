"""Smooth cutoff functions supported in relative cone neighborhoods.

Given a closed set ``Z``, a set ``W`` closed away from ``Z`` and a ratio
``eta``, the neighborhood ``G_eta(W, Z) = {d(x, W) < eta * d(x, Z)}``
shrinks conically toward the points where ``W`` and ``Z`` meet at
infinitesimal separation.  :func:`build_cutoff` produces a function that
is identically 1 on a smaller cone neighborhood, vanishes outside
``G_eta``, takes values in [0, 1], and whose order-``|a|`` derivatives
stay below ``C / d(x, Z)^{|a|}`` -- checked numerically, never proved.

The construction composes a polynomial transition profile with the ratio
of two *regularized* distances.  Points, balls and full spaces get exact
smooth distance formulas; every other descriptor piece is replaced by a
power-mean soft minimum over a parameter net clustered toward the piece's
frontier, which is smooth away from the set and comparable to the true
distance at the scales the cutoff transition lives on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import geometry
from .errors import OnZ, SlackTooLarge, UnsupportedDescriptor
from .geometry import Ball, GraphCell, PointCell, SetDescriptor, cell_param_net
from .jets import multi_indices, mi_order

IN, OUT, INDETERMINATE = 1, 0, -1


# ---------------------------------------------------------------------------
# transition profile


@dataclass(frozen=True)
class TransitionProfile:
    """Monotone polynomial step: 1 for s <= 0, 0 for s >= 1, with
    derivatives through ``order`` vanishing at both joints (degree
    ``2*order + 1`` on the middle piece)."""

    order: int
    rising: tuple  # Fraction coefficients of the degree-(2q+1) ramp, low->high

    def __call__(self, s):
        s_arr = np.asarray(s, dtype=float)
        s_mid = np.clip(np.nan_to_num(s_arr, nan=2.0, posinf=2.0,
                                      neginf=-1.0), -1.0, 2.0)
        mid = np.zeros_like(s_mid)
        c = [float(v) for v in self.rising]
        for coeff in reversed(c):
            mid = mid * s_mid + coeff
        # Horner rounding can overshoot the exact ramp by ~1 ulp at the
        # joints; fold it back so the range is exactly [0, 1]
        ramp = np.clip(1.0 - mid, 0.0, 1.0)
        out = np.where(s_mid <= 0.0, 1.0, np.where(s_mid >= 1.0, 0.0, ramp))
        return float(out) if np.isscalar(s) or out.ndim == 0 else out

    def eval_exact(self, s: Fraction) -> Fraction:
        if s <= 0:
            return Fraction(1)
        if s >= 1:
            return Fraction(0)
        acc = Fraction(0)
        for coeff in reversed(self.rising):
            acc = acc * s + coeff
        return 1 - acc

    def derivative(self, s, k: int):
        """k-th derivative; identically zero on both plateaus."""
        if k == 0:
            return self(s)
        coeffs = list(self.rising)
        for _ in range(k):
            coeffs = [c * (i + 1) for i, c in enumerate(coeffs[1:])]
        s_arr = np.asarray(s, dtype=float)
        s_mid = np.clip(np.nan_to_num(s_arr, nan=2.0, posinf=2.0,
                                      neginf=-1.0), -1.0, 2.0)
        mid = np.zeros_like(s_mid)
        for coeff in reversed([float(v) for v in coeffs]):
            mid = mid * s_mid + coeff
        out = np.where((s_mid <= 0.0) | (s_mid >= 1.0), 0.0, -mid)
        return float(out) if np.isscalar(s) or out.ndim == 0 else out


def smooth_transition(q: int) -> TransitionProfile:
    """Transition profile of smoothness order ``q >= 1``.

    The ramp is the classical polynomial smoothstep: for q = 1 it is
    ``3 s^2 - 2 s^3``, so the profile is ``1 - 3 s^2 + 2 s^3``.
    """
    if q < 1:
        raise ValueError("transition order must be >= 1")
    coeffs = [Fraction(0)] * (2 * q + 2)
    for j in range(q + 1):
        c = (Fraction((-1) ** j) * math.comb(q + j, j)
             * math.comb(2 * q + 1, q - j))
        coeffs[q + 1 + j] = c
    return TransitionProfile(q, tuple(coeffs))


# ---------------------------------------------------------------------------
# regularized distances


class SmoothDistance:
    """Batched evaluable ``d~`` comparable to the distance to a descriptor:
    ``c1 * d <= d~ <= c2 * d`` away from a reported collar.  Smooth wherever
    the cutoff transition can live (bounded away from the set itself)."""

    c1: float = 1.0
    c2: float = 1.0
    collar: float = 0.0

    def __call__(self, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        out = self._eval(X)
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def _eval(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _ConstantDistance(SmoothDistance):
    def __init__(self, value: float):
        self.value = value

    def _eval(self, X):
        return np.full(len(X), self.value)


class _PointDistance(SmoothDistance):
    def __init__(self, point):
        self.point = np.asarray([float(v) for v in point])

    def _eval(self, X):
        return np.linalg.norm(X - self.point[None, :], axis=1)


class _BallDistance(SmoothDistance):
    def __init__(self, ball: Ball):
        self.center = np.asarray([float(v) for v in ball.center])
        self.radius = float(ball.radius)

    def _eval(self, X):
        d = np.linalg.norm(X - self.center[None, :], axis=1)
        return np.maximum(0.0, d - self.radius)


class _BoxDistance(SmoothDistance):
    """Exact clamp distance to the closure of a constant-wall
    full-dimensional cell (in its internal axis order).  Identically zero
    on the cell, so a cutoff plateau covers it exactly; the second
    derivative jumps only across corner-extension planes, where the
    surrounding cutoff is constant whenever the excluded set contains the
    cell's boundary."""

    def __init__(self, bounds, perm):
        self.lo = np.asarray([b[0] for b in bounds])
        self.hi = np.asarray([b[1] for b in bounds])
        self.perm = list(perm)

    def _eval(self, X):
        Y = X[:, self.perm]
        excess = np.maximum(self.lo[None, :] - Y, 0.0) \
            + np.maximum(Y - self.hi[None, :], 0.0)
        return np.linalg.norm(excess, axis=1)


class _NetSoftmin(SmoothDistance):
    """Power-mean soft minimum over a finite point net: always between
    ``k^(-1/s) * min_i |x - a_i|`` and ``min_i |x - a_i|``, and smooth away
    from the net points themselves."""

    def __init__(self, points: np.ndarray, exponent: int, collar: float):
        self.points = points
        self.exponent = exponent
        self.c1 = len(points) ** (-1.0 / exponent)
        self.c2 = 1.0
        self.collar = collar

    def _eval(self, X):
        out = np.empty(len(X))
        chunk = max(1, 2_000_000 // max(1, len(self.points)))
        for start in range(0, len(X), chunk):
            sl = slice(start, min(len(X), start + chunk))
            diff = X[sl, None, :] - self.points[None, :, :]
            d = np.linalg.norm(diff, axis=2)
            m = d.min(axis=1)
            safe = np.where(m > 0.0, m, 1.0)
            ratios = np.minimum(safe[:, None] / d.clip(1e-300), 1.0)
            s = np.clip((ratios ** self.exponent).sum(axis=1), 1.0, None)
            out[sl] = np.where(m > 0.0, m * s ** (-1.0 / self.exponent), 0.0)
        return out


class _CombinedDistance(SmoothDistance):
    def __init__(self, parts: list[SmoothDistance], exponent: int):
        self.parts = parts
        self.exponent = exponent
        k = len(parts)
        self.c1 = min(p.c1 for p in parts) * k ** (-1.0 / exponent)
        self.c2 = max(p.c2 for p in parts)
        self.collar = max(p.collar for p in parts)

    def _eval(self, X):
        vals = np.stack([p._eval(X) for p in self.parts], axis=1)
        m = vals.min(axis=1)
        safe = np.where(m > 0.0, m, 1.0)
        ratios = np.minimum(safe[:, None] / vals.clip(1e-300), 1.0)
        s = np.clip((ratios ** self.exponent).sum(axis=1), 1.0, None)
        return np.where(m > 0.0, m * s ** (-1.0 / self.exponent), 0.0)


def _is_full_space(cell: GraphCell) -> bool:
    if cell.graph:
        return False
    base = cell.base
    while isinstance(base, geometry.Slab):
        if base.lower is not None or base.upper is not None:
            return False
        base = base.base
    return base.lower is None and base.upper is None


def regularized_distance(desc: SetDescriptor, q: int = 2,
                         box: float = geometry.DEFAULT_BOX_HALFWIDTH,
                         net_ratio: float = 0.94) -> SmoothDistance:
    """Smooth evaluable surrogate for ``d(x, desc)``.

    Points, balls and the full space are exact.  Cell closures become a
    soft minimum over a frontier-clustered net; ``net_ratio`` is the
    geometric spacing toward the frontier (the smoothing scale selector:
    closer to 1 means a finer, more faithful surrogate).  The combination
    exponent is chosen from the total net size so the comparability ratio
    ``c2/c1`` stays near or below 2.
    """
    if desc.is_empty:
        return _ConstantDistance(1.0)
    parts: list[SmoothDistance] = []
    nets: list[np.ndarray] = []
    collar = 0.0
    for piece in desc.pieces:
        if isinstance(piece, PointCell):
            parts.append(_PointDistance(piece.point))
        elif isinstance(piece, Ball):
            parts.append(_BallDistance(piece))
        elif isinstance(piece, GraphCell):
            if _is_full_space(piece):
                return _ConstantDistance(0.0)
            bounds = (geometry._as_box(piece.base, box)
                      if not piece.graph else None)
            if bounds is not None:
                parts.append(_BoxDistance(bounds, piece.perm))
                continue
            net, cov = cell_param_net(piece.base, box, refine_ratio=net_ratio)
            pts = np.empty((len(net), piece.ambient_dim))
            for j, u in enumerate(net):
                pts[j] = piece.embed(tuple(u))
            nets.append(pts)
            collar = max(collar, float(np.median(cov)))
        else:
            raise UnsupportedDescriptor(
                f"no smooth surrogate for {type(piece).__name__}")
    total = sum(len(p) for p in nets) + len(parts)
    exponent = max(12, 3 * math.ceil(math.log2(total + 2)))
    for pts in nets:
        parts.append(_NetSoftmin(pts, exponent, collar))
    if len(parts) == 1:
        return parts[0]
    return _CombinedDistance(parts, exponent)


# ---------------------------------------------------------------------------
# batched bracketed distances (for membership certificates at volume)


class _BatchBracket:
    """Vectorized lower/upper distance brackets to a descriptor."""

    def __init__(self, desc: SetDescriptor,
                 box: float = geometry.DEFAULT_BOX_HALFWIDTH):
        self.desc = desc
        self.exact: list = []
        self.nets: list[tuple[np.ndarray, float]] = []
        for piece in desc.pieces:
            if isinstance(piece, (PointCell, Ball)):
                self.exact.append(piece)
            elif isinstance(piece, GraphCell):
                if _is_full_space(piece):
                    self.exact.append(None)  # distance identically 0
                    continue
                bounds = (geometry._as_box(piece.base, box)
                          if not piece.graph else None)
                if bounds is not None:
                    self.exact.append(_BoxDistance(bounds, piece.perm))
                    continue
                net, cov = cell_param_net(piece.base, box)
                pts = np.empty((len(net), piece.ambient_dim))
                for j, u in enumerate(net):
                    pts[j] = piece.embed(tuple(u))
                lip = 1.0 + geometry._net_lipschitz(piece, net)
                self.nets.append((pts, float(np.max(cov)) * lip))
            else:
                raise UnsupportedDescriptor(type(piece).__name__)

    def __call__(self, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = len(X)
        if self.desc.is_empty:
            ones = np.ones(n)
            return ones, ones.copy()
        lo = np.full(n, np.inf)
        up = np.full(n, np.inf)
        for piece in self.exact:
            if piece is None:
                lo[:] = 0.0
                up[:] = 0.0
                continue
            if isinstance(piece, PointCell):
                d = np.linalg.norm(
                    X - np.asarray([float(v) for v in piece.point])[None, :],
                    axis=1)
            elif isinstance(piece, _BoxDistance):
                d = piece._eval(X)
            else:
                d = np.linalg.norm(
                    X - np.asarray([float(v) for v in piece.center])[None, :],
                    axis=1)
                d = np.maximum(0.0, d - piece.radius)
            lo = np.minimum(lo, d)
            up = np.minimum(up, d)
        for pts, slack in self.nets:
            chunk = max(1, 2_000_000 // max(1, len(pts)))
            d = np.empty(n)
            for start in range(0, n, chunk):
                sl = slice(start, min(n, start + chunk))
                d[sl] = np.linalg.norm(
                    X[sl, None, :] - pts[None, :, :], axis=2).min(axis=1)
            lo = np.minimum(lo, np.maximum(0.0, d - slack))
            up = np.minimum(up, d)
        return lo, up


def cone_membership(x, w_desc: SetDescriptor, z_desc: SetDescriptor,
                    eta: float, tau: float = 1e-12,
                    box: float = geometry.DEFAULT_BOX_HALFWIDTH) -> int:
    """Certified membership of ``x`` in the cone neighborhood
    ``{d(x, W) < eta * d(x, Z)}``: IN when the upper W-bracket beats the
    lower Z-bracket, OUT for the reverse certificate, INDETERMINATE when
    the brackets overlap.  Raises :class:`OnZ` within ``tau`` of Z."""
    dw = geometry.set_distance(w_desc, x, box=box)
    dz = geometry.set_distance(z_desc, x, box=box)
    if dz.up <= tau:
        raise OnZ(f"point {tuple(x)} lies on the excluded set")
    if dw.up < eta * dz.lo:
        return IN
    if dw.lo >= eta * dz.up:
        return OUT
    return INDETERMINATE


def cone_membership_batch(brackets_w: _BatchBracket, brackets_z: _BatchBracket,
                          eta: float, X: np.ndarray):
    """Vectorized membership certificates; returns int array of
    IN / OUT / INDETERMINATE and the Z upper bracket for reuse."""
    lo_w, up_w = brackets_w(X)
    lo_z, up_z = brackets_z(X)
    out = np.full(len(np.atleast_2d(X)), INDETERMINATE, dtype=int)
    out[up_w < eta * lo_z] = IN
    out[lo_w >= eta * up_z] = OUT
    return out, up_z


# ---------------------------------------------------------------------------
# the cutoff itself


@dataclass(frozen=True)
class CutoffSpec:
    w_desc: SetDescriptor
    z_desc: SetDescriptor
    eta: float
    q: int
    rho: Optional[float] = None  # transition start in regularized ratio units
    box: float = geometry.DEFAULT_BOX_HALFWIDTH

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.rho is not None and not (0 < self.rho < self.eta):
            raise ValueError("rho must lie in (0, eta)")


class CutoffFn:
    """The assembled cutoff: profile composed with the regularized
    distance ratio.  Exactly 1 where the ratio is below ``rho_int``,
    exactly 0 where it reaches ``eta_int``; in between strictly inside
    (0, 1).  ``rho_prime`` is the certified plateau ratio in *true*
    distance units."""

    def __init__(self, spec: CutoffSpec, d_w: SmoothDistance,
                 d_z: SmoothDistance, profile: TransitionProfile,
                 eta_int: float, rho_int: float, rho_prime: float):
        self.spec = spec
        self.d_w = d_w
        self.d_z = d_z
        self.profile = profile
        self.eta_int = eta_int
        self.rho_int = rho_int
        self.rho_prime = rho_prime

    def ratio(self, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        dw = self.d_w._eval(X)
        dz = self.d_z._eval(X)
        r = np.where(dz > 0.0, dw / np.where(dz > 0.0, dz, 1.0), np.inf)
        return r if np.asarray(x).ndim > 1 else float(r[0])

    def __call__(self, x):
        if self.spec.w_desc.is_empty:
            X = np.atleast_2d(np.asarray(x, dtype=float))
            out = np.zeros(len(X))
            return out if np.asarray(x).ndim > 1 else 0.0
        r = np.asarray(self.ratio(x))
        t = (r - self.rho_int) / (self.eta_int - self.rho_int)
        out = self.profile(t)
        return out if np.asarray(x).ndim > 1 else float(out)


def _on_set_probes(desc: SetDescriptor, box: float):
    """Points on (or extremely near) the descriptor, for measuring the
    regularized distance's residual ratio where it should vanish."""
    pts = []
    for piece in desc.pieces:
        if isinstance(piece, PointCell):
            pts.append([float(v) for v in piece.point])
        elif isinstance(piece, Ball):
            c = np.asarray([float(v) for v in piece.center])
            pts.append(list(c))
            for i in range(len(c)):
                for sign in (-1.0, 1.0):
                    q = c.copy()
                    q[i] += sign * piece.radius
                    pts.append(list(q))
        elif isinstance(piece, GraphCell):
            if _is_full_space(piece):
                continue
            net, _ = cell_param_net(piece.base, box)
            step = max(1, len(net) // 512)
            for u in net[::step]:
                pts.append([float(v) for v in piece.embed(tuple(u))])
    return np.asarray(pts, dtype=float) if pts else None


def build_cutoff(spec: CutoffSpec) -> CutoffFn:
    """Construct a cutoff meeting the plateau/support/derivative contract
    for ``spec``; :func:`verify_cutoff` is the authority on whether it
    does.

    The transition starts at ``rho`` (default ``eta * (c1/c2)^2 / 2``) in
    regularized-ratio units, so comparability slack cannot push the
    plateau past the support ratio; the certified plateau ``rho_prime`` in
    true-distance units additionally subtracts the surrogate's measured
    residual ratio at on-set probe points (nonzero for net-backed pieces).
    """
    profile = smooth_transition(max(spec.q, 4))
    if spec.w_desc.is_empty:
        d_w = _ConstantDistance(1.0)
        d_z = regularized_distance(spec.z_desc, spec.q, spec.box)
        return CutoffFn(spec, d_w, d_z, profile, spec.eta, spec.eta / 2,
                        spec.eta / 2)
    d_w = regularized_distance(spec.w_desc, spec.q, spec.box)
    d_z = regularized_distance(spec.z_desc, spec.q, spec.box)
    c_ratio = min(d_w.c1 / d_z.c2, d_z.c1 / d_w.c2)
    if c_ratio ** 2 / 2.0 < 5e-3:
        raise SlackTooLarge(
            f"comparability ratio {c_ratio:.3f} leaves no plateau below "
            f"eta={spec.eta}")
    eta_int = spec.eta * c_ratio
    rho_int = spec.rho if spec.rho is not None else eta_int * c_ratio / 2.0
    if not rho_int < eta_int:
        raise SlackTooLarge("requested rho does not clear the support ratio")
    probes = _on_set_probes(spec.w_desc, spec.box)
    residual = 0.0
    if probes is not None and not spec.z_desc.is_empty:
        dz_vals = d_z._eval(probes)
        dw_vals = d_w._eval(probes)
        ok = dz_vals > 0
        if np.any(ok):
            residual = float(np.max(dw_vals[ok] / dz_vals[ok]))
    rho_prime = 0.9 * c_ratio * max(0.0, rho_int - 2.5 * residual)
    if rho_prime <= 0.0:
        raise SlackTooLarge(
            f"surrogate residual ratio {residual:.3e} swallows the plateau")
    return CutoffFn(spec, d_w, d_z, profile, eta_int, rho_int, rho_prime)


# ---------------------------------------------------------------------------
# derivative sampling and the contract report


_STENCILS = {
    0: ((0, 1.0),),
    1: ((-1, -0.5), (1, 0.5)),
    2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
    3: ((-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)),
    4: ((-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)),
}


def _tensor_stencil(alpha):
    """Offsets (integer grid) and weights for the tensor central stencil of
    a mixed partial derivative; divide by h^{|alpha|} after combining."""
    offsets = [(np.zeros(len(alpha)), 1.0)]
    for axis, k in enumerate(alpha):
        new = []
        for off, wt in offsets:
            for o, w in _STENCILS[k]:
                off2 = off.copy()
                off2[axis] = o
                new.append((off2, wt * w))
        offsets = new
    return (np.stack([o for o, _ in offsets]),
            np.asarray([w for _, w in offsets]))


def sampled_derivative_batch(fn, X: np.ndarray, alpha, h: np.ndarray):
    """Richardson-extrapolated central differences of a batched callable at
    many points with per-point step sizes."""
    offs, wts = _tensor_stencil(alpha)
    k = mi_order(alpha)

    def level(step):
        pts = X[:, None, :] + offs[None, :, :] * step[:, None, None]
        flat = pts.reshape(-1, X.shape[1])
        vals = np.asarray(fn(flat)).reshape(len(X), len(offs))
        return (vals * wts[None, :]).sum(axis=1) / step ** k

    if k == 0:
        return np.asarray(fn(X))
    d1 = level(h)
    d2 = level(h / 2.0)
    return (4.0 * d2 - d1) / 3.0


@dataclass
class CutoffReport:
    plateau_checked: int
    plateau_violations: int
    support_checked: int
    support_violations: int
    bound_constants: dict          # multi-index -> scaled derivative max
    bound_ratios: dict             # refinement stability per multi-index
    excluded_radius: float
    in_range: bool                 # all sampled values within [0, 1]

    @property
    def passed(self) -> bool:
        return (self.plateau_violations == 0 and self.support_violations == 0
                and self.in_range
                and all(r < 2.0 for r in self.bound_ratios.values()))


def _sample_box(w_desc, z_desc, box):
    """Axis-aligned window padded around all descriptor pieces."""
    pts = []
    for desc in (w_desc, z_desc):
        for piece in desc.pieces:
            if isinstance(piece, PointCell):
                pts.append([float(v) for v in piece.point])
            elif isinstance(piece, Ball):
                c = [float(v) for v in piece.center]
                pts.append([v - piece.radius for v in c])
                pts.append([v + piece.radius for v in c])
            elif isinstance(piece, GraphCell):
                net, _ = cell_param_net(piece.base, box)
                for u in net[:: max(1, len(net) // 32)]:
                    pts.append(list(piece.embed(tuple(u))))
    arr = np.asarray(pts)
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    pad = 0.75 * max(1e-3, float(np.max(hi - lo)), 1.0)
    return lo - pad, hi + pad


def verify_cutoff(omega: CutoffFn, spec: CutoffSpec, grid: int = 100,
                  n_samples: int = 10_000, seed: int = 0,
                  max_order: Optional[int] = None) -> CutoffReport:
    """Sample the three contract clauses of a cutoff.

    plateau: every sample certified inside the ``rho_prime`` cone must give
    exactly 1.  support: every sample certified outside the ``eta`` cone
    must give exactly 0.  bounds: the scaled derivative maxima
    ``max |D^a omega| * d(x,Z)^{|a|}`` must be finite and stable (ratio
    below 2) under one refinement of the sample count.
    """
    n = _descriptor_dim(spec)
    rng = np.random.default_rng(seed)
    lo, hi = _sample_box(spec.w_desc, spec.z_desc, spec.box)
    bw = _BatchBracket(spec.w_desc, spec.box)
    bz = _BatchBracket(spec.z_desc, spec.box)

    X = lo + (hi - lo) * rng.random((n_samples, n))
    lo_w, up_w = bw(X)
    lo_z, up_z = bz(X)
    scene_scale = float(np.max(hi - lo))
    exclusion = 1e-6 * scene_scale
    keep = up_z > exclusion
    X, lo_w, up_w, lo_z, up_z = (a[keep] for a in (X, lo_w, up_w, lo_z, up_z))

    vals = np.asarray(omega(X))
    in_range = bool(np.all((vals >= 0.0) & (vals <= 1.0)))

    plateau_mask = up_w < omega.rho_prime * lo_z
    plateau_viol = int(np.sum(vals[plateau_mask] != 1.0))
    support_mask = lo_w >= spec.eta * up_z
    support_viol = int(np.sum(vals[support_mask] != 0.0))

    q = spec.q if max_order is None else max_order
    consts, ratios = {}, {}
    for level, count in enumerate((len(X) // 2, len(X))):
        sel = np.arange(count) if level else rng.permutation(len(X))[:count]
        Xs, dz_up = X[sel], up_z[sel]
        r = np.asarray(omega.ratio(Xs))
        t = (r - omega.rho_int) / (omega.eta_int - omega.rho_int)
        active = (t > -1.0) & (t < 2.0) & np.isfinite(t)
        Xa, dz_a = Xs[active], dz_up[active]
        h = np.maximum(dz_a / 100.0, 1e-9)
        for alpha in multi_indices(n, q):
            if mi_order(alpha) == 0:
                continue
            if len(Xa):
                d = sampled_derivative_batch(omega, Xa, alpha, h)
                c = float(np.max(np.abs(d) * dz_a ** mi_order(alpha)))
            else:
                c = 0.0
            if level == 0:
                consts[alpha] = c
            else:
                prev = consts[alpha]
                ratios[alpha] = c / prev if prev > 0 else 1.0
                consts[alpha] = max(prev, c)
    return CutoffReport(
        plateau_checked=int(np.sum(plateau_mask)),
        plateau_violations=plateau_viol,
        support_checked=int(np.sum(support_mask)),
        support_violations=support_viol,
        bound_constants=consts, bound_ratios=ratios,
        excluded_radius=exclusion, in_range=in_range)


def _descriptor_dim(spec: CutoffSpec) -> int:
    for desc in (spec.w_desc, spec.z_desc):
        for piece in desc.pieces:
            if isinstance(piece, PointCell):
                return len(piece.point)
            if isinstance(piece, Ball):
                return len(piece.center)
            if isinstance(piece, GraphCell):
                return piece.ambient_dim
    raise UnsupportedDescriptor("cannot infer dimension from empty spec")


def format_report(rep: CutoffReport) -> str:
    """Cutoff contract report as structured text, with the scaled
    derivative constants tabulated per multi-index."""
    lines = [
        f"plateau   {rep.plateau_checked:>7} checked   "
        f"{rep.plateau_violations} violations",
        f"support   {rep.support_checked:>7} checked   "
        f"{rep.support_violations} violations",
        f"range     {'[0,1] ok' if rep.in_range else 'OUT OF RANGE'}",
        f"excluded  |d(x,Z)| < {rep.excluded_radius:.3e}",
        "alpha        C_hat          refine-ratio",
    ]
    for alpha in sorted(rep.bound_constants):
        c = rep.bound_constants[alpha]
        r = rep.bound_ratios.get(alpha, float("nan"))
        lines.append(f"{str(alpha):<12} {c:<14.6g} {r:.3f}")
    lines.append("verdict   " + ("PASS" if rep.passed else "FAIL"))
    return "\n".join(lines)
