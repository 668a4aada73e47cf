"""Distortion amplifier: a C^1-small perturbation f_n of f whose iterates
separate the derivatives along two families of orbits exponentially in n."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import precision as pr
from .bumps import transition_profile
from .diffeo import Compose, DiffeoExpr
from .errors import DomainError, InvalidTreeError
from .flow import richardson_d2
from .ops import fixed_points, iterate, orbit_log_derivs
from .serialize import register
from .variation import variation

__all__ = [
    "BlendedContraction",
    "OrbitConjugate",
    "AmplifierSpec",
    "amplifier_spec",
    "distortion_amplifier",
    "distortion_gap",
    "gap_series",
    "distortion_constant",
    "log_derivative_deviation",
]

# normalized layout of the local map on its interval [0, 1]
P1, P2, P4, P5 = 0.02, 0.25, 0.75, 0.98
LEFT_RAMP = (P1, 0.15, 0.35, 0.65)
RIGHT_RAMP = (0.35, 0.65, 0.85, P5)


def _plateau(s, knots, order):
    """1 on [b, c], 0 outside (a, d), C^2 transitions in between."""
    a, b, c, d = knots
    prof = transition_profile(2)
    up = np.clip((s - a) / (b - a), 0.0, 1.0)
    dn = np.clip((d - s) / (d - c), 0.0, 1.0)
    rising = s < b
    falling = s > c
    w = np.where(rising, prof(up), np.where(falling, prof(dn), 1.0))
    out = [np.clip(w, 0.0, 1.0)]
    if order >= 1:
        out.append(np.where(rising, prof(up, 1) / (b - a), np.where(falling, -prof(dn, 1) / (d - c), 0.0)))
    if order >= 2:
        out.append(np.where(rising, prof(up, 2) / (b - a) ** 2, np.where(falling, prof(dn, 2) / (d - c) ** 2, 0.0)))
    return out


class BlendedContraction(DiffeoExpr):
    """Diffeomorphism of ``interval`` (identity outside) blending the affine
    contractions ``p2 + d2 (x - p2)`` and ``p4 + d4 (x - p4)``.

    Fixed points inside (p1, p5) are p2, p4 and one repelling point p3
    between them; Dh(p2) = d2 and Dh(p4) = d4 exactly.
    """

    kind = "blended_contraction"

    def __init__(self, interval, d2: float, d4: float, check: bool = True):
        super().__init__()
        self.interval = (float(interval[0]), float(interval[1]))
        self.d2, self.d4 = float(d2), float(d4)
        if not self.interval[1] > self.interval[0]:
            raise InvalidTreeError("contraction interval must have positive length")
        if not (0 < self.d2 <= 1 and 0 < self.d4 <= 1):
            raise InvalidTreeError("contraction rates must lie in (0, 1]")
        self.identity = self.d2 == 1.0 and self.d4 == 1.0
        if check:
            s = np.linspace(0.0, 1.0, 8193)
            _, du = self._u(s, 1)
            if np.any(1.0 + du <= 0):
                raise InvalidTreeError("blended contraction is not monotone")

    def _u(self, s, order):
        w2 = _plateau(s, LEFT_RAMP, order)
        w4 = _plateau(s, RIGHT_RAMP, order)
        a2, a4 = self.d2 - 1.0, self.d4 - 1.0
        l2, l4 = s - P2, s - P4
        out = [a2 * w2[0] * l2 + a4 * w4[0] * l4]
        if order >= 1:
            out.append(a2 * (w2[1] * l2 + w2[0]) + a4 * (w4[1] * l4 + w4[0]))
        if order >= 2:
            out.append(a2 * (w2[2] * l2 + 2 * w2[1]) + a4 * (w4[2] * l4 + 2 * w4[1]))
        return out

    def to_unit(self, x):
        e0, e1 = self.interval
        return (x - e0) / (e1 - e0)

    def from_unit(self, s):
        e0, e1 = self.interval
        return e0 + (e1 - e0) * s

    @property
    def fixed(self):
        """(p1, p2, p3, p4, p5) in absolute coordinates."""
        if self.identity:
            p3 = 0.5
        else:
            p3 = brentq(lambda s: float(self._u(np.array([s]), 0)[0][0]), P2 + 1e-9, P4 - 1e-9, xtol=1e-15)
        return tuple(float(self.from_unit(s)) for s in (P1, P2, p3, P4, P5))

    def _jet(self, x, order):
        xf = pr.to_float(x)
        L = self.interval[1] - self.interval[0]
        s = self.to_unit(xf)
        inside = (s > 0) & (s < 1)
        u = self._u(np.where(inside, s, 0.0), order)
        out = [np.where(inside, xf + L * u[0], xf)]
        if order >= 1:
            out.append(np.where(inside, 1.0 + u[1], 1.0))
        if order >= 2:
            out.append(np.where(inside, u[2] / L, 0.0))
        if pr.is_extended(x):
            out[0] = x + pr.lift_like(out[0] - xf, x)
            out[1:] = [pr.lift_like(o, x) for o in out[1:]]
        return out

    def inverse_jet(self, y, order=1, bracket=None):
        return super().inverse_jet(y, order, bracket or self.interval)

    def log_derivative_sup(self, n: int = 8193) -> float:
        s = np.linspace(0.0, 1.0, n)
        return float(np.max(np.abs(np.log1p(self._u(s, 1)[1]))))

    def to_dict(self):
        return {"type": "blended_contraction", "interval": list(self.interval), "d2": self.d2, "d4": self.d4}


@register("blended_contraction", {"interval", "d2", "d4"})
def _load_blend(s):
    iv = s.req("interval")
    if not isinstance(iv, list) or len(iv) != 2:
        raise InvalidTreeError(f"{s.path}.interval must be a pair")
    return BlendedContraction(iv, s.num("d2"), s.num("d4"))


class OrbitConjugate(DiffeoExpr):
    """``f^j h f^-j`` on ``f^j(I)`` for j = 0..depth, identity elsewhere.

    ``h`` must be supported in the interval I, which ``f`` must displace
    off itself so that the translated copies are disjoint.
    """

    kind = "orbit_conjugate"

    def __init__(self, f: DiffeoExpr, h: DiffeoExpr, interval, depth: int):
        super().__init__()
        self.f, self.h = f, h
        self.interval = (float(interval[0]), float(interval[1]))
        self.depth = int(depth)
        if self.depth < 0:
            raise InvalidTreeError("orbit depth must be nonnegative")
        ends = [np.array(self.interval)]
        for _ in range(self.depth):
            ends.append(pr.to_float(f(ends[-1])))
        cells = np.array(ends)
        order = np.argsort(cells[:, 0])
        srt = cells[order]
        if np.any(srt[1:, 0] < srt[:-1, 1]):
            raise InvalidTreeError("translated supports overlap: f does not displace the interval off itself")
        self.cells = cells

    def _first(self, xf):
        y = xf.copy()
        d = np.ones_like(xf)
        finv = self.f.inverse()
        for j, (lo, hi) in enumerate(self.cells):
            m = (xf > lo) & (xf < hi)
            if not np.any(m):
                continue
            z = xf[m]
            dz = np.zeros_like(z)
            for _ in range(j):
                z, dd = finv.jet(z, 1)
                dz += np.log(pr.to_float(dd))
            w, dw = self.h.jet(z, 1)
            dw = np.log(pr.to_float(dw))
            for _ in range(j):
                w, dd = self.f.jet(w, 1)
                dw += np.log(pr.to_float(dd))
            y[m] = pr.to_float(w)
            d[m] = np.exp(dz + dw)
        return y, d

    def _jet(self, x, order):
        xf = pr.to_float(x)
        y, d = self._first(xf)
        out = [y, d][: order + 1]
        if order >= 2:
            d2 = np.zeros_like(xf)
            for lo, hi in self.cells:
                m = (xf > lo) & (xf < hi)
                if np.any(m):
                    h = np.full(int(m.sum()), 1e-3 * (hi - lo))
                    d2[m] = richardson_d2(lambda z: self._first(z)[1], xf[m], h)
            out.append(d2)
        if pr.is_extended(x):
            out[0] = x + pr.lift_like(out[0] - xf, x)
            out[1:] = [pr.lift_like(o, x) for o in out[1:]]
        return out

    def inverse(self):
        return self.memo(("inverse",), lambda: OrbitConjugate(self.f, self.h.inverse(), self.interval, self.depth))

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inverse().jet(y, order)

    def children(self):
        return (self.f, self.h)

    def to_dict(self):
        return {"type": "orbit_conjugate", "map": self.f.to_dict(), "local": self.h.to_dict(),
                "interval": list(self.interval), "depth": self.depth}


@register("orbit_conjugate", {"map", "local", "interval", "depth"})
def _load_orbit(s):
    iv = s.req("interval")
    if not isinstance(iv, list) or len(iv) != 2:
        raise InvalidTreeError(f"{s.path}.interval must be a pair")
    return OrbitConjugate(s.tree("map"), s.tree("local"), iv, s.int("depth"))


@dataclass
class AmplifierSpec:
    """Displaced interval, warm-up, local map and depth of an amplifier.

    ``h`` acts on ``f^m(delta)``; ``J1`` and ``J2`` are pulled back from
    neighbourhoods of its attracting fixed points p2 and p4.
    """

    delta: tuple
    J1: tuple
    J2: tuple
    m: int
    n: int
    h: BlendedContraction
    mu1: float
    mu2: float
    U: tuple
    eps: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"delta": list(self.delta), "J1": list(self.J1), "J2": list(self.J2), "m": self.m, "n": self.n,
                "h": self.h.to_dict(), "mu1": self.mu1, "mu2": self.mu2, "U": list(self.U), "eps": self.eps}


def _component_end(f, x):
    rep = fixed_points(f)
    locs = np.array(rep.locations)
    fx = float(f(np.array([x]))[0])
    right = fx > x
    if right:
        return float(locs[locs > x].min())
    return float(locs[locs < x].max())


def amplifier_spec(f: DiffeoExpr, delta, m: int, n: int, mu1: float = 0.5, mu2: float = 0.8,
                   margin: float = 0.02, identity: bool = False, eps: float | None = None) -> AmplifierSpec:
    """Build and validate an amplifier spec for ``f`` on ``delta``.

    The local rates are d2 = mu1 (1 - margin) and d4 = mu2 + margin (1 - mu2),
    so 0 < d2 < mu1 < mu2 < d4 < 1.  ``identity`` uses h = id.  Without
    ``eps`` the smallest admissible value 4 max(|log Dh|, V(f; U), |log Df|_U)
    is used.
    """
    d0, d1 = float(delta[0]), float(delta[1])
    if not (0 < d0 < d1 < 1):
        raise DomainError("delta must be a subinterval of (0, 1)")
    if not 0 < mu1 < mu2 < 1:
        raise DomainError("need 0 < mu1 < mu2 < 1")
    fd = pr.to_float(f(np.array([d0, d1])))
    if not (fd[0] >= d1 or fd[1] <= d0):
        raise DomainError("f(delta) meets delta")
    forward = fd[0] > d0
    e = np.sort(pr.to_float(iterate(f, m, np.array([d0, d1]))))
    d2, d4 = (1.0, 1.0) if identity else (mu1 * (1 - margin), mu2 + margin * (1 - mu2))
    h = BlendedContraction(tuple(e), d2, d4)
    p1, p2, p3, p4, p5 = h.fixed
    # image windows around the attracting points, on the affine plateaus
    s2 = h.from_unit(np.array([P2 - 0.05, P2 + 0.05]))
    s4 = h.from_unit(np.array([P4 - 0.05, P4 - 0.01]))
    if not identity and not (p3 < s4[0]):
        raise InvalidTreeError("repelling point of the local map is misplaced")
    back = lambda w: tuple(np.sort(pr.to_float(iterate(f, -m, w))).tolist())
    J1, J2 = back(s2), back(s4)
    end = _component_end(f, d0)
    U = (float(e[0]), end) if forward else (end, float(e[1]))
    vU = variation(f, U, grid=1025)
    xs = np.linspace(U[0], U[1], 4097)
    ldf = float(np.max(np.abs(np.log(pr.to_float(f.jet(xs, 1)[1])))))
    need = 4.0 * max(h.log_derivative_sup(), vU, ldf)
    if eps is None:
        eps = need * (1 + 1e-6)
    elif eps <= need:
        raise DomainError(f"eps={eps} is below the admissible level {need:.6g}")
    return AmplifierSpec((d0, d1), J1, J2, int(m), int(n), h, mu1, mu2, U, float(eps),
                         {"fixed": (p1, p2, p3, p4, p5), "V_U": vU, "forward": forward})


def distortion_amplifier(f: DiffeoExpr, spec: AmplifierSpec) -> DiffeoExpr:
    """f_n = f o (f^j h f^-j) on f^(j+m)(delta), j = 0..n, and f elsewhere."""
    if spec.h.identity:
        return f
    return Compose([f, OrbitConjugate(f, spec.h, spec.h.interval, spec.n)])


def gap_series(fn: DiffeoExpr, spec: AmplifierSpec, x1, x2):
    """Worst-case gaps min |log D f_n^(k+m)(x2) - log D f_n^(k+m)(x1)| for k = 0..n."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    _, s1 = orbit_log_derivs(fn, spec.n + spec.m, x1)
    _, s2 = orbit_log_derivs(fn, spec.n + spec.m, x2)
    s1, s2 = pr.to_float(s1)[spec.m:], pr.to_float(s2)[spec.m:]
    diff = np.abs(s2[:, None, :] - s1[:, :, None])
    return np.arange(spec.n + 1), diff.reshape(spec.n + 1, -1).min(axis=1)


def distortion_gap(fn: DiffeoExpr, spec: AmplifierSpec, x1, x2) -> float:
    """|log D f_n^(n+m)(x2) - log D f_n^(n+m)(x1)|, minimised over the given points."""
    return float(gap_series(fn, spec, x1, x2)[1][-1])


def distortion_constant(f: DiffeoExpr, spec: AmplifierSpec, grid: int = 513) -> float:
    """max(sup_{x,y in delta} Df^m(y)/Df^m(x), exp V(f; U))."""
    x = np.linspace(spec.delta[0], spec.delta[1], grid)
    _, s = orbit_log_derivs(f, spec.m, x)
    s = pr.to_float(s[-1])
    return float(max(np.exp(s.max() - s.min()), np.exp(spec.extra.get("V_U", variation(f, spec.U)))))


def log_derivative_deviation(f: DiffeoExpr, fn: DiffeoExpr, spec: AmplifierSpec, per_cell: int = 257) -> float:
    """sup |log Df - log Df_n| sampled densely on every modified interval."""
    if fn is f:
        return 0.0
    node = fn.parts[-1]
    x = np.concatenate([np.linspace(lo, hi, per_cell) for lo, hi in node.cells])
    a = np.log(pr.to_float(f.jet(x, 1)[1]))
    b = np.log(pr.to_float(fn.jet(x, 1)[1]))
    return float(np.max(np.abs(a - b)))
