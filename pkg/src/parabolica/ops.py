"""Pointwise operations on expression trees: evaluation with domain checks,
iteration, the log-derivative cocycle, fixed points and C^l distances."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import precision as pr
from .diffeo import DiffeoExpr, as_array
from .errors import DomainError, InvalidTreeError, SecondDerivativeUnavailable

__all__ = [
    "evaluate",
    "deriv",
    "inverse_eval",
    "iterate",
    "log_deriv_cocycle",
    "orbit_log_derivs",
    "FixedPoint",
    "FixedPointReport",
    "fixed_points",
    "cl_distance",
    "c1_distance",
    "grid_points",
]


def _check_unit(x):
    xf = pr.to_float(as_array(x))
    if np.any(~np.isfinite(xf)) or np.any(xf < 0) or np.any(xf > 1):
        raise DomainError("argument outside [0, 1]")


def evaluate(f: DiffeoExpr, x):
    _check_unit(x)
    return f(x)


def deriv(f: DiffeoExpr, x, order: int = 1):
    _check_unit(x)
    return f.deriv(x, order)


def inverse_eval(f: DiffeoExpr, y):
    _check_unit(y)
    return f.inverse_eval(y)


def iterate(f: DiffeoExpr, n: int, x):
    """f^n(x); negative n iterates the inverse."""
    step = f if n >= 0 else f.inverse()
    y = as_array(x)
    for _ in range(abs(int(n))):
        y = step.jet(y, 0)[0]
    return y if np.ndim(y) else y[()]


def orbit_log_derivs(f: DiffeoExpr, n: int, x):
    """Orbit points and prefix sums ``S_j = log Df^j(x)`` for j = 0..n.

    Returns ``(points, sums)`` with shape ``(n + 1,) + shape(x)``.
    """
    y = as_array(x)
    pts = [y]
    sums = [y * 0]
    acc = y * 0
    for _ in range(int(n)):
        v, d = f.jet(y, 1)
        if np.any(d <= 0):
            raise InvalidTreeError("nonpositive derivative along an orbit")
        acc = acc + pr.log(d)
        y = v
        pts.append(y)
        sums.append(acc)
    return np.stack(pts), np.stack(sums)


def log_deriv_cocycle(f: DiffeoExpr, n: int, x):
    """log Df^n(x) as the orbit sum of log Df; never differentiates f^n."""
    if n < 0:
        raise ValueError("cocycle length must be nonnegative")
    _, sums = orbit_log_derivs(f, n, x)
    out = sums[-1]
    return out if np.ndim(out) else out[()]


def grid_points(grid, lo=0.0, hi=1.0):
    if np.ndim(grid) == 0:
        return np.linspace(lo, hi, int(grid))
    return np.asarray(grid, dtype=float)


def cl_distance(f: DiffeoExpr, g: DiffeoExpr, ell: int = 0, grid=1025, lo=0.0, hi=1.0) -> float:
    """Grid supremum of |D^l f - D^l g|."""
    x = grid_points(grid, lo, hi)
    a = f.jet(x, ell)[ell]
    b = g.jet(x, ell)[ell]
    return float(np.max(np.abs(pr.to_float(a - b))))


def c1_distance(f: DiffeoExpr, g: DiffeoExpr, grid=1025, lo=0.0, hi=1.0) -> float:
    """The combined C^1 metric max(|f - g|_0, |Df - Dg|_0)."""
    x = grid_points(grid, lo, hi)
    a, b = f.jet(x, 1), g.jet(x, 1)
    return float(max(np.max(np.abs(a[0] - b[0])), np.max(np.abs(a[1] - b[1]))))


@dataclass
class FixedPoint:
    location: float
    tangency: str  # "transversal" or "one-sided"
    df: float
    d2f: float | None
    sign_left: int
    sign_right: int


@dataclass
class FixedPointReport:
    points: list
    tol: float
    identity_intervals: list = field(default_factory=list)
    unresolved: list = field(default_factory=list)

    @property
    def locations(self):
        return [p.location for p in self.points]

    def interior(self):
        return [p for p in self.points if 0.0 < p.location < 1.0]

    def rows(self):
        return [
            (p.location, p.tangency, p.df, np.nan if p.d2f is None else p.d2f, p.sign_left, p.sign_right)
            for p in self.points
        ]


def fixed_points(f: DiffeoExpr, tol: float = 1e-12, level: int = 12) -> FixedPointReport:
    """Fixed points of f on [0, 1] from a dyadic grid of 2**level + 1 points."""
    x = np.linspace(0.0, 1.0, 2**level + 1)
    d = np.asarray(f(x), dtype=float) - x
    d[0] = d[-1] = 0.0
    zero = np.abs(d) <= tol

    def disp(t):
        return float(f(np.array([t]))[0]) - t

    found = {0.0, 1.0}
    identity_intervals = []
    unresolved = []
    # runs of grid zeros: isolated zeros or identity stretches
    i = 1
    while i < len(x) - 1:
        if zero[i]:
            j = i
            while j + 1 < len(x) - 1 and zero[j + 1]:
                j += 1
            run = slice(i, j + 1)
            if j - i >= 2 and np.all(d[run] == 0):
                identity_intervals.append((float(x[i]), float(x[j])))
            else:
                # a flat tangency: keep the grid point closest to the root
                found.add(float(x[i + int(np.argmin(np.abs(d[run])))]))
            i = j + 1
        else:
            i += 1
    # strict sign changes between nonzero neighbours
    s = np.sign(np.where(zero, 0.0, d))
    for k in range(len(x) - 1):
        if s[k] * s[k + 1] < 0:
            found.add(float(brentq(disp, x[k], x[k + 1], xtol=1e-15, rtol=1e-15)))
    # tangential zeros: local minima of |d| with constant sign around them
    ad = np.abs(d)
    for k in range(1, len(x) - 1):
        if zero[k] or s[k - 1] * s[k + 1] <= 0:
            continue
        # a dip far above its neighbour differences cannot reach zero between grid points
        depth = 8.0 * max(ad[k - 1] - ad[k], ad[k + 1] - ad[k]) + 1e3 * tol
        if ad[k] <= ad[k - 1] and ad[k] <= ad[k + 1] and ad[k] <= depth:
            res = minimize_scalar(lambda t: abs(disp(t)), bounds=(x[k - 1], x[k + 1]), method="bounded",
                                  options={"xatol": 1e-13})
            if abs(disp(res.x)) <= tol:
                found.add(float(res.x))
            elif ad[k] < 1e3 * tol:
                unresolved.append(float(res.x))
    locs = sorted(found)
    # merge numerically identical roots
    merged = []
    for v in locs:
        if merged and abs(v - merged[-1]) < 1e-9:
            continue
        merged.append(v)
    merged = [v for v in merged if not any(a < v < b for a, b in identity_intervals)]
    pts = []
    h = 1.0 / 2**level
    for v in merged:
        sl = int(np.sign(disp(v - h))) if v - h >= 0 else 0
        sr = int(np.sign(disp(v + h))) if v + h <= 1 else 0
        if 0 < v < 1:
            tangency = "transversal" if sl * sr < 0 else "one-sided"
        else:
            tangency = "one-sided"
        jet = f.jet(np.array([v]), 1)
        try:
            d2 = float(pr.to_float(f.jet(np.array([v]), 2)[2])[0])
        except SecondDerivativeUnavailable:
            d2 = None
        pts.append(FixedPoint(float(v), tangency, float(pr.to_float(jet[1])[0]), d2, sl, sr))
    return FixedPointReport(pts, tol, identity_intervals, unresolved)
