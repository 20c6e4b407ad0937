"""Verification utilities: Richardson finite differences, the jet-field
compatibility residual, little-o rate fitting, and the extension agreement
check.

Asymptotic claims ("this quantity is o(s^e)") are operationalized two
ways, because finite sampling cannot certify a limit: the fitted log-log
slope must clear the required exponent by a margin, or the values divided
by s^e must decay monotonically below a threshold.  Both outcomes are
reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateScales, StencilOutOfDomain
from .jets import (FieldSpec, MultiIndex, mi_factorial, mi_order,
                   multi_indices)

# ---------------------------------------------------------------------------
# finite differences


_CENTRAL = {
    0: ((0, 1.0),),
    1: ((-1, -0.5), (1, 0.5)),
    2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
    3: ((-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)),
    4: ((-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)),
}


def _central_once(f: Callable, alpha: MultiIndex, x: Sequence[float],
                  h: float) -> float:
    stencils = [(list(x), 1.0)]
    for axis, k in enumerate(alpha):
        new = []
        for pt, wt in stencils:
            for o, w in _CENTRAL[k]:
                pt2 = list(pt)
                pt2[axis] = pt2[axis] + o * h
                new.append((pt2, wt * w))
        stencils = new
    total = 0.0
    for pt, wt in stencils:
        try:
            total += wt * float(f(pt))
        except Exception as exc:
            raise StencilOutOfDomain(
                f"stencil point {tuple(pt)} not evaluable: {exc}") from exc
    return total / h ** mi_order(alpha)


def finite_difference(f: Callable, alpha: MultiIndex, x: Sequence[float],
                      h: float = 1e-3) -> tuple[float, float]:
    """Richardson-extrapolated central difference of mixed order ``alpha``.

    Returns ``(value, error_estimate)``; the estimate is the disagreement
    between the two step sizes scaled by the extrapolation factor, so for
    smooth inputs halving ``h`` shrinks it by about 4x.
    """
    if mi_order(alpha) == 0:
        return float(f(list(x))), 0.0
    d1 = _central_once(f, alpha, x, h)
    d2 = _central_once(f, alpha, x, h / 2.0)
    return (4.0 * d2 - d1) / 3.0, abs(d2 - d1) / 3.0


# ---------------------------------------------------------------------------
# jet-field compatibility residual


@dataclass(frozen=True)
class ResidualSample:
    a: tuple
    b: tuple
    beta: MultiIndex
    residual: object     # exact when the field is rational
    separation: float


def whitney_residual(jets_at: Callable, c: Sequence, beta: MultiIndex,
                     pairs: Sequence[tuple]) -> list[ResidualSample]:
    """Compatibility residual of a jet field between pairs of points.

    ``jets_at(point)`` must return the field's jet at a point of the set
    (a :class:`~whitney.jets.PointJet`); ``pairs`` is a sequence of point
    pairs drawn near the target ``c``.  For each pair the residual is

        F^beta(a) - sum_{|alpha| <= p - |beta|} F^{alpha+beta}(b)/alpha! * (a-b)^alpha

    computed in exact arithmetic whenever the jets are rational.
    """
    out = []
    for a, b in pairs:
        ja = jets_at(a)
        jb = jets_at(b)
        p = ja.p
        diff = tuple(x - y for x, y in zip(a, b))
        acc = 0
        for alpha in multi_indices(ja.n, p - mi_order(beta)):
            coeff = jb.coeffs[tuple(x + y for x, y in zip(alpha, beta))]
            if coeff == 0:
                continue
            term = coeff * _one_over_factorial(alpha, coeff)
            for d, k in zip(diff, alpha):
                if k:
                    term = term * d ** k
            acc = acc + term
        r = ja.coeffs[tuple(beta)] - acc
        sep = math.sqrt(sum(float(d) ** 2 for d in diff))
        if sep > 0:
            out.append(ResidualSample(tuple(a), tuple(b), tuple(beta), r, sep))
    return out


def _one_over_factorial(alpha, sample):
    f = mi_factorial(alpha)
    return 1.0 / f if isinstance(sample, float) else Fraction(1, f)


def radial_pairs(c: float, scales: Sequence, direction: float = 1.0):
    """1-d pair generator: both points on one side of the target, the
    separation tracking the scale."""
    return [((c + direction * s,), (c + direction * s / 2,)) for s in scales]


def straddling_pairs(c: float, scales: Sequence):
    return [((c + s,), (c - s,)) for s in scales]


def ball_pairs(c: Sequence, scales: Sequence, rng: np.random.Generator,
               project=None):
    """Random pairs in shrinking balls around ``c``; ``project`` maps a raw
    point back onto the set when the set is not full-dimensional."""
    c = np.asarray(c, dtype=float)
    out = []
    for s in scales:
        a = c + s * (rng.random(len(c)) - 0.5)
        b = c + s * (rng.random(len(c)) - 0.5)
        if project is not None:
            a, b = project(a), project(b)
        out.append((tuple(a), tuple(b)))
    return out


# ---------------------------------------------------------------------------
# rate fitting


@dataclass
class RateFit:
    slope: float
    intercept: float
    fit_residual: float
    required: float
    margin: float
    normalized_tail: float
    normalized_monotone: bool
    verdict: str                  # "PASS" or "FAIL"
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"


def rate_fit(samples: Sequence[tuple], required: float,
             margin: float = 0.25, theta: float = 1e-2) -> RateFit:
    """Decide whether ``value = o(scale^required)`` from (scale, value)
    samples at geometrically decreasing scales.

    PASS if the least-squares log-log slope clears ``required + margin``,
    or if ``value / scale^required`` decreases monotonically below
    ``theta``.  Needs at least 6 scales spanning two decades.
    """
    if len(samples) < 6:
        raise DegenerateScales("need at least 6 scales")
    scales = np.asarray([float(s) for s, _ in samples])
    values = np.abs(np.asarray([float(v) for _, v in samples]))
    if np.any(scales <= 0):
        raise DegenerateScales("scales must be positive")
    if scales.max() / scales.min() < 99.0:
        raise DegenerateScales("scales must span at least two decades")
    order = np.argsort(scales)[::-1]
    scales, values = scales[order], values[order]

    normalized = values / scales ** required
    monotone = bool(np.all(np.diff(normalized) <= 1e-12 + 0.0 * normalized[1:]))
    tail = float(normalized[-1])
    nonzero = values > 0
    if np.count_nonzero(nonzero) < len(values) / 2:
        # (near-)identically zero residuals: flat in the strongest sense
        if np.all(values <= 1e-15 * np.maximum(1.0, scales)):
            return RateFit(math.inf, -math.inf, 0.0, required, margin, 0.0,
                           True, "PASS", "values identically zero")
    ls, lv = np.log10(scales[nonzero]), np.log10(values[nonzero])
    if len(ls) >= 2:
        slope, intercept = np.polyfit(ls, lv, 1)
        resid = float(np.sqrt(np.mean((np.polyval((slope, intercept), ls)
                                       - lv) ** 2)))
    else:
        slope, intercept, resid = math.inf, -math.inf, 0.0
    slope_ok = slope >= required + margin
    decay_ok = monotone and tail < theta
    verdict = "PASS" if (slope_ok or decay_ok) else "FAIL"
    reason = ("slope clears margin" if slope_ok else
              "normalized values decay" if decay_ok else
              f"slope {slope:.3f} < {required + margin:.3f} and normalized "
              f"tail {tail:.3e} not decaying")
    return RateFit(float(slope), float(intercept), resid, required, margin,
                   tail, monotone, verdict, reason)


# ---------------------------------------------------------------------------
# extension agreement


@dataclass
class AgreementEntry:
    stratum_id: str
    alpha: MultiIndex
    max_rel_dev: float
    samples: int
    passed: bool


@dataclass
class AgreementReport:
    entries: list[AgreementEntry] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def worst(self) -> float:
        return max((e.max_rel_dev for e in self.entries), default=0.0)

    def lines(self):
        for e in self.entries:
            status = "PASS" if e.passed else "FAIL"
            yield (f"{status}  stratum={e.stratum_id:<14} alpha={e.alpha}  "
                   f"max_rel_dev={e.max_rel_dev:.3e}  over {e.samples} samples")


def check_extension(f: Callable, scene, tol: float = 1e-4,
                    samples_per_stratum: int = 100,
                    seed: int = 0) -> AgreementReport:
    """Compare sampled derivatives of an extension against the scene's
    declared jet coefficients on every stratum.

    Deviation is measured relative to ``1 + |F^alpha|``; the step size is
    scaled to the local feature size per the sampling plan.
    """
    from . import geometry  # local import to keep module layers acyclic

    rng = np.random.default_rng(seed)
    report = AgreementReport(tolerance=tol)
    for stratum in scene.strata:
        fld = scene.fields[stratum.id]
        cell = stratum.cell
        params = geometry.stratum_samples(cell, samples_per_stratum,
                                          scene.box, rng=rng)
        pts = []
        for u in params:
            if isinstance(cell, geometry.PointCell):
                pts.append((u, tuple(float(v) for v in cell.point)))
            else:
                pts.append((u, tuple(float(v) for v in cell.embed(u))))
        for alpha_int in multi_indices(scene.n, scene.p):
            worst, used = 0.0, 0
            for u, x in pts:
                expect = _coeff_value(fld, alpha_int, u)
                alpha_amb = _to_ambient_alpha(alpha_int, cell, scene.n)
                h = _local_step(stratum, x, scene)
                try:
                    got, _ = finite_difference(f, alpha_amb, x, h)
                except StencilOutOfDomain:
                    continue
                dev = abs(got - float(expect)) / (1.0 + abs(float(expect)))
                worst = max(worst, dev)
                used += 1
            report.entries.append(AgreementEntry(
                stratum.id, alpha_int, worst, used, worst < tol))
    return report


def _coeff_value(fld: FieldSpec, alpha, u):
    fn = fld.coeffs[tuple(alpha)]
    from .jets import _eval_coeff
    return _eval_coeff(fn, u if u else (0,))


def _to_ambient_alpha(alpha_int, cell, n):
    from . import geometry
    if isinstance(cell, geometry.PointCell):
        return tuple(alpha_int)
    amb = [0] * n
    for i, k in enumerate(alpha_int):
        amb[cell.perm[i]] = k
    return tuple(amb)


def _local_step(stratum, x, scene) -> float:
    d = stratum.feature_size(x, scene)
    return min(1e-3, max(d / 10.0, 1e-7))
