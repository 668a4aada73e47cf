"""Mather invariant of a single-component map, its distance to rotations,
the k-th root criterion, and the centralizer distortion bound."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import precision as pr
from .chart import chart_for, component_of
from .circle import CircleLift, SampledLift
from .diffeo import DiffeoExpr
from .ops import orbit_log_derivs

__all__ = [
    "MatherResult",
    "mather",
    "triviality_defect",
    "translation_commutation_defect",
    "aligned_distance",
    "centralizer_distortion_gap",
]


@dataclass
class MatherResult:
    """Samples of M(t) = B(A^-1(t)) and the lift interpolating them."""

    t: np.ndarray
    values: np.ndarray
    lift: SampledLift
    p: float
    q: float
    component: tuple
    seam_error: float

    def __call__(self, t):
        return self.lift(t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "M_t"])
        for a, b in zip(self.t, self.values):
            w.writerow([repr(float(a)), repr(float(b))])
        return buf.getvalue()


def mather(f: DiffeoExpr, p: float | None = None, q: float | None = None, grid: int = 256,
           component=None, tol: float = 1e-8, precision=None) -> MatherResult:
    """M(t) = B(A^-1(t)) with A the left chart (A(p) = 0) and B the right chart (B(q) = 0)."""
    if component is None:
        component = component_of(f, 0.5 if p is None else p)
    a, b = component
    mid = 0.5 * (a + b)
    p = mid if p is None else float(p)
    q = p if q is None else float(q)
    A = chart_for(f, "left", p, component, tol=tol, precision=precision)
    B = chart_for(f, "right", q, component, tol=tol, precision=precision)
    t = np.arange(grid) / grid
    x = A.inverse(t)
    vals = pr.to_float(B(x))
    # seam: M(1) = B(f(A^-1(0))) should equal M(0) + 1
    x1 = A.inverse(np.array([1.0]))
    seam = float(abs(pr.to_float(B(x1))[0] - vals[0] - 1.0))
    return MatherResult(t, vals, SampledLift(t, vals), p, q, tuple(component), seam)


def _lift_of(M) -> CircleLift:
    return M.lift if isinstance(M, MatherResult) else M


def _grid(n):
    return np.arange(n) / n


def triviality_defect(M, grid: int = 256) -> float:
    """(max - min)/2 of M(t) - t: sup distance to the nearest translation."""
    if isinstance(M, MatherResult):
        d = M.values - M.t
    else:
        t = _grid(grid)
        d = _lift_of(M)(t) - t
    return float(0.5 * (d.max() - d.min()))


def translation_commutation_defect(M, k: int, grid: int = 256) -> float:
    """sup |M(t + 1/k) - M(t) - 1/k|; zero exactly when a k-th root exists."""
    L = _lift_of(M)
    t = _grid(grid)
    return float(np.max(np.abs(L(t + 1.0 / k) - L(t) - 1.0 / k)))


def aligned_distance(M1, M2, grid: int = 256, shift: bool = True) -> tuple[float, float]:
    """min over tau of the midrange-aligned sup distance between M1 o T_tau and M2.

    Returns (distance, tau).  With ``shift=False`` only the constant is aligned.
    """
    L1, L2 = _lift_of(M1), _lift_of(M2)
    t = _grid(grid)
    m2 = L2(t)

    def dist(tau):
        d = L1(t + tau) - m2
        return 0.5 * float(d.max() - d.min())

    if not shift:
        return dist(0.0), 0.0
    scan = np.linspace(-0.5, 0.5, 201)
    vals = [dist(s) for s in scan]
    i = int(np.argmin(vals))
    res = minimize_scalar(dist, bounds=(scan[max(i - 1, 0)], scan[min(i + 1, 200)]), method="bounded",
                          options={"xatol": 1e-12})
    best = (float(res.fun), float(res.x)) if res.fun < vals[i] else (vals[i], float(scan[i]))
    return best


def centralizer_distortion_gap(f: DiffeoExpr, g: DiffeoExpr, x, N: int) -> float:
    """max over n <= N of |log Df^n(x) - log Df^n(g(x))| (max over x if an array)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _, s1 = orbit_log_derivs(f, N, x)
    _, s2 = orbit_log_derivs(f, N, g(x))
    return float(np.max(np.abs(pr.to_float(s1) - pr.to_float(s2))))
