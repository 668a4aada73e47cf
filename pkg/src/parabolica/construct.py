"""Constructive perturbations: blending, germ replacement near fixed points,
and Bernstein-polynomial smoothing of the interior."""
from __future__ import annotations

import numpy as np
from scipy.interpolate import BPoly

from . import precision as pr
from .bumps import BumpFn
from .diffeo import Blend, DiffeoExpr, GermQ, PiecewiseGlue
from .errors import InvalidTreeError, SecondDerivativeUnavailable
from .ops import fixed_points

__all__ = ["blend", "choose_germ", "germ_replace", "BernsteinPoly", "bernstein_smooth"]

#: below this |D^2 f(a)| counts as zero in the three-case rule
D2_ZERO = 1e-9


def blend(f: DiffeoExpr, g: DiffeoExpr, bump: BumpFn) -> DiffeoExpr:
    """``rho g + (1 - rho) f``, rejected unless increasing on the bump support."""
    return Blend(f, g, bump, check=True)


def choose_germ(point, mode: str = "C2", lam: float | None = None) -> GermQ:
    """Germ replacing f near the fixed point described by ``point``.

    ``mode='C2'`` follows the three-case rule on D^2 f(a); ``mode='C1'`` uses
    q1 (no crossing) or q2 (crossing) with ``lam`` defaulting to 1.
    """
    a = point.location
    if a == 0.0:
        above = point.sign_right > 0
        crossing = False
    elif a == 1.0:
        above = point.sign_left > 0
        crossing = False
    else:
        crossing = point.tangency == "transversal"
        # for a crossing point, "above" means below on the left and above on the right
        above = point.sign_right > 0
    if mode == "C2":
        if point.d2f is None:
            raise SecondDerivativeUnavailable("C2 germ replacement needs second derivatives")
        if abs(point.d2f) >= D2_ZERO:
            return GermQ(1, point.d2f / 2.0, a)
        family = 2 if crossing else 3
        return GermQ(family, 1.0 if above else -1.0, a)
    if mode == "C1":
        size = 1.0 if lam is None else abs(lam)
        family = 2 if crossing else 1
        return GermQ(family, size if above else -size, a)
    raise ValueError("mode must be 'C1' or 'C2'")


def germ_replace(f: DiffeoExpr, eps: float, mode: str = "C2", lam: float | None = None,
                 bump_order: int | None = None, tol: float = 1e-12) -> DiffeoExpr:
    """Blend f with the appropriate closed-form germ on the eps-neighbourhood
    of every fixed point.  The fixed set never grows (checked)."""
    if mode == "C2" and not f.has_d2:
        raise SecondDerivativeUnavailable("C2 germ replacement needs a tree with second derivatives")
    report = fixed_points(f, tol=tol)
    if report.identity_intervals:
        raise InvalidTreeError("germ replacement needs isolated fixed points")
    locs = np.array(report.locations)
    if len(locs) > 1 and np.min(np.diff(locs)) <= 2 * eps:
        raise InvalidTreeError("fixed points are not 2*eps separated")
    order = bump_order if bump_order is not None else (2 if mode == "C2" else 1)
    out = f
    for point in report.points:
        q = choose_germ(point, mode, lam)
        out = Blend(out, q, BumpFn(point.location, eps, order), check=True)
    new = fixed_points(out, tol=tol)
    extra = [v for v in new.locations if np.min(np.abs(locs - v)) > 1e-7]
    if extra or new.identity_intervals:
        raise InvalidTreeError(f"germ replacement created fixed points at {extra}")
    return out


class BernsteinPoly(DiffeoExpr):
    """Polynomial piece given in the Bernstein basis on ``[lo, hi]``."""

    kind = "bernstein_poly"

    def __init__(self, coeffs, lo: float, hi: float):
        super().__init__()
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.lo, self.hi = float(lo), float(hi)
        self.domain = (self.lo, self.hi)
        self._p = BPoly(self.coeffs[:, None], [self.lo, self.hi])
        self._d1 = self._p.derivative(1)
        self._d2 = self._p.derivative(2)

    def _jet(self, x, order):
        xf = pr.to_float(x)
        out = [self._p(xf)]
        if order >= 1:
            out.append(self._d1(xf))
        if order >= 2:
            out.append(self._d2(xf))
        return [pr.lift_like(o, x) for o in out] if pr.is_extended(x) else out

    def to_dict(self):
        return {"type": "bernstein_poly", "coeffs": self.coeffs.tolist(), "lo": self.lo, "hi": self.hi}


def bernstein_piece(f: DiffeoExpr, eps: float, degree: int) -> BernsteinPoly:
    """Integral from f(eps) of the degree-n Bernstein polynomial of Df on [eps, 1 - eps]."""
    n = int(degree)
    if n < 1:
        raise ValueError("degree must be at least 1")
    width = 1.0 - 2.0 * eps
    nodes = eps + width * np.arange(n + 1) / n
    c = pr.to_float(f.jet(nodes, 1)[1])
    if np.any(c <= 0):
        raise InvalidTreeError("derivative must be positive for Bernstein smoothing")
    start = float(pr.to_float(f.jet(np.array([eps]), 0)[0])[0])
    d = start + width / (n + 1) * np.concatenate([[0.0], np.cumsum(c)])
    return BernsteinPoly(d, eps, 1.0 - eps)


def bernstein_smooth(f: DiffeoExpr, eps: float, degree: int, bump_order: int = 2,
                     check_fixed: bool = True) -> DiffeoExpr:
    """Replace f on [2 eps, 1 - 2 eps] by a polynomial, interpolating along bumps
    on [eps, 2 eps] and [1 - 2 eps, 1 - eps]; f is kept near both endpoints."""
    if not 0 < eps < 0.25:
        raise ValueError("eps must lie in (0, 1/4)")
    if check_fixed and fixed_points(f).interior():
        raise InvalidTreeError("Bernstein smoothing needs a map without interior fixed points")
    fhat = bernstein_piece(f, eps, degree)
    left = Blend(fhat, f, BumpFn(eps, eps, bump_order), check=True)
    right = Blend(f, fhat, BumpFn(1.0 - 2.0 * eps, eps, bump_order), check=True)
    return PiecewiseGlue([0.0, eps, 2 * eps, 1 - 2 * eps, 1 - eps, 1.0], [f, left, fhat, right, f])
