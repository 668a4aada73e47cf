"""Plateau bump functions.

The profile equals 1 on ``[c - eps/4, c + eps/4]`` and 0 outside
``[c - 3eps/4, c + 3eps/4]``.  Each transition is a piecewise polynomial
obtained by integrating a piecewise-linear second derivative twice:

* order 1: constant acceleration, coast, constant deceleration (C^1, degree 2),
  peak slope 8/(3 eps);
* order 2: the same with linear jerk ramps (C^2, degree 3), peak slope
  2.9/eps and peak curvature about 21.4/eps^2.

Any C^2 transition across a width of eps/2 has curvature at least 16/eps^2,
so the order-2 curvature target of 10/eps^2 cannot be met on this geometry.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import PPoly

from . import precision as pr

__all__ = ["BumpFn", "transition_profile"]


@lru_cache(maxsize=None)
def transition_profile(order: int) -> PPoly:
    """Increasing transition s on [0, 1] with s(0)=0, s(1)=1 and flat ends."""
    if order == 1:
        v = 4.0 / 3.0
        ta = 1.0 - 1.0 / v
        knots = [0.0, ta, 1.0 - ta, 1.0]
        acc = [v / ta, 0.0, -v / ta]
        # piecewise-constant second derivative
        c = np.array([acc])
        dd = PPoly(c, knots)
    elif order == 2:
        v = 1.45
        ta = 1.0 - 1.0 / v
        r, h = ta / 8.0, ta * 3.0 / 4.0
        a = v / (r + h)
        knots = [0.0, r, r + h, ta, 1.0 - ta, 1.0 - ta + r, 1.0 - r, 1.0]
        vals = [0.0, a, a, 0.0, 0.0, -a, -a, 0.0]
        slopes = np.diff(vals) / np.diff(knots)
        c = np.array([slopes, vals[:-1]])
        dd = PPoly(c, knots)
    else:
        raise ValueError("bump order must be 1 or 2")
    s = dd.antiderivative(2)
    scale = float(s(1.0))
    return PPoly(s.c / scale, s.x)


@dataclass(frozen=True)
class BumpFn:
    """Plateau bump centered at ``center`` with half-width ``eps``."""

    center: float
    eps: float
    order: int = 2

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("bump half-width must be positive")
        if self.order not in (1, 2):
            raise ValueError("bump order must be 1 or 2")

    @property
    def support(self):
        return self.center - 0.75 * self.eps, self.center + 0.75 * self.eps

    @property
    def plateau(self):
        return self.center - 0.25 * self.eps, self.center + 0.25 * self.eps

    def jet(self, x, order=2):
        """[rho, D rho, D^2 rho][: order + 1] evaluated in binary64."""
        xf = pr.to_float(x)
        s = xf - self.center
        w = 0.5 * self.eps
        u = np.clip((0.75 * self.eps - np.abs(s)) / w, 0.0, 1.0)
        prof = transition_profile(self.order)
        out = [np.clip(prof(u), 0.0, 1.0)]
        if order >= 1:
            sgn = -np.sign(s)
            out.append(prof(u, 1) * sgn / w)
        if order >= 2:
            out.append(prof(u, 2) / (w * w))
        if pr.is_extended(x):
            out = [pr.lift_like(o, x) for o in out]
        return out

    def __call__(self, x):
        return self.jet(np.asarray(x, dtype=float), 0)[0]

    def to_dict(self):
        return {"type": "bump", "center": self.center, "eps": self.eps, "order": self.order}
