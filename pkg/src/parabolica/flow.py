"""Flows generated by a map through its Abel coordinates, k-th roots and the
root defect between the two endpoint flows."""
from __future__ import annotations

import numpy as np

from . import precision as pr
from .chart import FatouChart, chart_for, component_of
from .diffeo import DiffeoExpr, FlowTime, Identity, as_array
from .fields import VectorField1D
from .ops import grid_points
from .serialize import register

__all__ = ["richardson_d2", "ChartFlow", "flow_time", "flow_from_field", "kth_root", "root_defect", "fatou", "fatou_inverse"]


def fatou(chart: FatouChart, x):
    return chart(x)


def fatou_inverse(chart: FatouChart, t):
    return chart.inverse(t)


def richardson_d2(first, x, h):
    """Richardson-extrapolated central difference of the derivative ``first``."""

    def central(step):
        return (pr.to_float(first(x + step)) - pr.to_float(first(x - step))) / (2 * step)

    return (4 * central(h / 2) - central(h)) / 3


class ChartFlow(DiffeoExpr):
    """``x -> A^-1(A(x) + t)`` on one component, the identity elsewhere.

    Second derivatives are Richardson-extrapolated central differences of the
    exact first derivative, with step proportional to the local displacement.
    """

    kind = "chart_flow"

    def __init__(self, f: DiffeoExpr, side: str, t: float, p: float | None = None, component=None,
                 tol: float = 1e-8, precision=None):
        super().__init__()
        self.f, self.side, self.t = f, side, float(t)
        self.component = tuple(component) if component is not None else component_of(f, 0.5 if p is None else p)
        self.p = p
        self.tol = tol
        self.precision = precision
        self.has_d2 = True

    @property
    def chart(self) -> FatouChart:
        return chart_for(self.f, self.side, self.p, self.component, tol=self.tol, precision=self.precision)

    def _first(self, x):
        """Values and first derivatives."""
        y = x.copy()
        d = x * 0 + 1
        if self.t == 0:
            return y, d
        A = self.chart
        xf = pr.to_float(x)
        inside = (xf > A.a + A.guard) & (xf < A.b - A.guard)
        if np.any(inside):
            xi = x[inside]
            a, da = A.jet(xi)
            yi, dy = A.inverse_jet(a + self.t)
            y[inside] = as_array(yi)
            d[inside] = da * dy
        return y, d

    def _jet(self, x, order):
        y, d = self._first(x)
        out = [y]
        if order >= 1:
            out.append(d)
        if order >= 2:
            disp = np.abs(pr.to_float(y - x))
            xf = pr.to_float(x)
            A = self.chart
            room = np.minimum(xf - A.a, A.b - xf)
            h = np.clip(0.05 * disp, 1e-7, None)
            h = np.minimum(h, 0.25 * room)
            d2 = np.zeros_like(xf)
            ok = h > 4 * A.guard
            if np.any(ok):
                d2[ok] = richardson_d2(lambda z: self._first(z)[1], xf[ok], h[ok])
            out.append(pr.lift_like(d2, x) if pr.is_extended(x) else d2)
        return out

    def inverse(self):
        return ChartFlow(self.f, self.side, -self.t, self.p, self.component, self.tol, self.precision)

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inverse().jet(y, order)

    def to_dict(self):
        d = {"type": "chart_flow", "map": self.f.to_dict(), "side": self.side, "t": self.t,
             "component": list(self.component), "tol": self.tol}
        if self.p is not None:
            d["p"] = self.p
        return d


@register("chart_flow", {"map", "side", "t", "p", "component", "tol"})
def _load_chart_flow(s):
    return ChartFlow(s.tree("map"), s.req("side"), s.num("t"), s.get("p"), s.get("component"), s.num("tol", 1e-8))


def flow_time(f: DiffeoExpr, side: str, t: float, p: float | None = None, component=None,
              tol: float = 1e-8, precision=None) -> DiffeoExpr:
    """Time-t map of the generating flow at the chosen endpoint (f_t or f^t)."""
    if t == 1 and component is None:
        return f
    return ChartFlow(f, side, t, p, component, tol, precision)


def flow_from_field(X: VectorField1D, t: float, method: str = "exact") -> DiffeoExpr:
    """Time-t map of X; ``method='ode'`` uses the adaptive integrator."""
    if t == 0:
        return Identity()
    return FlowTime(X, t, method=method)


def kth_root(f: DiffeoExpr, k: int, side: str = "left", p: float | None = None, component=None,
             tol: float = 1e-8) -> DiffeoExpr:
    if k < 1:
        raise ValueError("k must be a positive integer")
    if k == 1:
        return f
    return ChartFlow(f, side, 1.0 / k, p, component, tol)


def root_defect(f: DiffeoExpr, k: int, grid=257, lo: float = 0.05, hi: float = 0.95, p: float | None = None,
                component=None, tol: float = 1e-8) -> float:
    """Grid supremum of |f_{1/k} - f^{1/k}| between the two endpoint flows."""
    if k == 1:
        return 0.0
    if component is None:
        component = component_of(f, 0.5 if p is None else p)
    a, b = component
    x = grid_points(grid, max(lo, a), min(hi, b))
    x = x[(x > a) & (x < b)]
    left = ChartFlow(f, "left", 1.0 / k, p, component, tol)
    right = ChartFlow(f, "right", 1.0 / k, p, component, tol)
    return float(np.max(np.abs(pr.to_float(left(x) - right(x)))))
