"""Vectorised safeguarded Newton iteration for increasing scalar equations."""
from __future__ import annotations

import numpy as np

from .errors import InvalidTreeError
from .precision import eps_of, isfinite, sqrt


def solve_increasing(fun, target, lo, hi, x0=None, *, rtol=None, maxiter=400):
    """Solve ``fun(x, idx)[0] == target`` elementwise for increasing ``fun``.

    ``fun(x, idx)`` receives the active subset of unknowns together with their
    indices into the full problem and returns ``(value, derivative)``.  The
    bracket ``[lo, hi]`` is maintained throughout; Newton steps leaving it are
    replaced by bisection.
    """
    target = np.asarray(target)
    shape = target.shape
    target = target.ravel()
    lo = np.broadcast_to(np.asarray(lo), shape).ravel().copy()
    hi = np.broadcast_to(np.asarray(hi), shape).ravel().copy()
    if x0 is None:
        x = 0.5 * (lo + hi)
    else:
        x = np.broadcast_to(np.asarray(x0), shape).ravel().copy()
        inside = (x > lo) & (x < hi)
        x = np.where(inside, x, 0.5 * (lo + hi))
    eps = eps_of(x)
    rtol = 4 * eps if rtol is None else rtol
    tiny = 1e3 * np.finfo(float).tiny
    active = np.arange(x.size)
    for _ in range(maxiter):
        if active.size == 0:
            break
        xa = x[active]
        v, d = fun(xa, active)
        r = v - target[active]
        hi[active] = np.where(r > 0, xa, hi[active])
        lo[active] = np.where(r < 0, xa, lo[active])
        xn = xa - r / d
        bad = ~isfinite(xn) | (xn <= lo[active]) | (xn >= hi[active]) | (d <= 0)
        la, ha = lo[active], hi[active]
        mid = 0.5 * (la + ha)
        # brackets spanning many binades above zero are split geometrically
        wide = (la >= 0) & (ha > 4 * np.maximum(la, tiny))
        if np.any(wide & bad):
            mid = np.where(wide, sqrt(np.maximum(la, tiny) * np.where(wide, ha, 1.0)), mid)
        xn = np.where(bad, mid, xn)
        scale = np.maximum(np.abs(xn), tiny)
        done = (r == 0) | (np.abs(xn - xa) <= rtol * scale) | (hi[active] - lo[active] <= rtol * scale + tiny)
        x[active] = np.where(r == 0, xa, xn)
        active = active[~done]
    if active.size:
        raise InvalidTreeError(f"monotone solve did not converge for {active.size} point(s)")
    return x.reshape(shape)
