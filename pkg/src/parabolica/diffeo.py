"""Expression trees for orientation-preserving diffeomorphisms of [0, 1].

Every node evaluates a *jet* ``[f(x), Df(x), D^2f(x)][:order+1]`` on a numpy
array ``x`` (binary64 or an object array of mpmath numbers).  Derivatives of
composite nodes follow the chain rule exactly; no node differentiates
numerically unless documented.
"""
from __future__ import annotations

import math
import threading
from typing import Sequence

import numpy as np

from . import precision as pr
from .bumps import BumpFn
from .errors import DomainError, InvalidTreeError, SecondDerivativeUnavailable
from .roots import solve_increasing

__all__ = [
    "DiffeoExpr",
    "Identity",
    "GermQ",
    "HatGermQ1",
    "PolyMap",
    "FlowTime",
    "Compose",
    "Inverse",
    "IntPower",
    "Blend",
    "HomothetyConj",
    "PiecewiseGlue",
    "compose",
    "as_array",
]


def as_array(x):
    """Array view of ``x``; object arrays pass through, scalars become float."""
    if isinstance(x, np.ndarray):
        return x if x.dtype == object else x.astype(float, copy=False)
    return np.asarray(x, dtype=float)


def _apply(jet_f, jet_g, order):
    """Jet of f o g given the jet of f at g(x) and the jet of g at x."""
    out = [jet_f[0]]
    if order >= 1:
        out.append(jet_f[1] * jet_g[1])
    if order >= 2:
        out.append(jet_f[2] * jet_g[1] ** 2 + jet_f[1] * jet_g[2])
    return out


class DiffeoExpr:
    """Base node.  Subclasses implement ``_jet`` and ``to_dict``."""

    kind = "abstract"
    has_d2 = True
    #: interval on which the node is defined (germs may extend past [0, 1])
    domain = (0.0, 1.0)

    def __init__(self):
        self._memo = {}
        self._memo_lock = threading.Lock()

    # -- evaluation ---------------------------------------------------
    def jet(self, x, order=1):
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        if order == 2 and not self.has_d2:
            raise SecondDerivativeUnavailable(f"{self.kind} node has no second derivative")
        xa = as_array(x)
        if xa.ndim == 0:
            return [v.reshape(()) for v in self._jet(xa.reshape(1), order)]
        return self._jet(xa, order)

    def _jet(self, x, order):
        raise NotImplementedError

    def __call__(self, x):
        out = self.jet(x, 0)[0]
        return out if np.ndim(out) else out[()]

    def deriv(self, x, order=1):
        out = self.jet(x, order)[order]
        return out if np.ndim(out) else out[()]

    # -- inverse --------------------------------------------------------
    def inverse(self) -> "DiffeoExpr":
        return Inverse(self)

    def inverse_jet(self, y, order=1, bracket=None):
        """Jet of the inverse map at y by bracketed Newton on this node."""
        y = as_array(y)
        lo, hi = bracket if bracket is not None else self.domain
        lo_a = np.full(y.shape, lo, dtype=float)
        hi_a = np.full(y.shape, hi, dtype=float)
        if pr.is_extended(y):
            lo_a, hi_a = pr.lift_like(lo_a, y), pr.lift_like(hi_a, y)
        inner_order = 1 if order <= 1 else 2

        def fun(xa, idx):
            j = self.jet(xa, 1)
            return j[0], j[1]

        # targets hitting a bracket end exactly (typically a fixed endpoint) need no solve
        ends = self.jet(np.array([lo, hi], dtype=float), 0)[0]
        at_lo, at_hi = y == ends[0], y == ends[1]
        free = ~(at_lo | at_hi)
        x = y * 0 + np.where(at_lo, lo_a, hi_a)
        if np.any(free):
            x[free] = solve_increasing(fun, y[free], lo_a[free], hi_a[free])
        j = self.jet(x, inner_order)
        out = [x]
        if order >= 1:
            out.append(1.0 / j[1])
        if order >= 2:
            out.append(-j[2] / j[1] ** 3)
        return out

    def inverse_eval(self, y):
        out = self.inverse_jet(y, 0)[0]
        return out if np.ndim(out) else out[()]

    # -- misc -------------------------------------------------------------
    def memo(self, key, build):
        """Thread-safe lazy cache; results never depend on caching."""
        with self._memo_lock:
            if key not in self._memo:
                self._memo[key] = build()
            return self._memo[key]

    def __matmul__(self, other):
        return Compose([self, other])

    def __pow__(self, n):
        return IntPower(self, int(n))

    def to_dict(self) -> dict:
        raise NotImplementedError

    def children(self) -> Sequence["DiffeoExpr"]:
        return ()

    def __repr__(self):
        return f"<{self.kind}>"


class Identity(DiffeoExpr):
    kind = "identity"

    def _jet(self, x, order):
        out = [x.copy()]
        if order >= 1:
            out.append(np.ones_like(x) if not pr.is_extended(x) else x * 0 + 1)
        if order >= 2:
            out.append(x * 0)
        return out

    def inverse(self):
        return self

    def inverse_jet(self, y, order=1, bracket=None):
        return self.jet(y, order)

    def to_dict(self):
        return {"type": "identity"}


class GermQ(DiffeoExpr):
    """Closed-form parabolic germ ``a + q_family^lam(x - a)``.

    ``q1(x) = x/(1 - lam x)``, ``q2(x) = x/sqrt(1 - lam x^2)``,
    ``q3(x) = x/cbrt(1 - lam x^3)``.  ``direction='inverse'`` negates lam,
    which is the exact inverse for all three families.
    """

    kind = "germ_q"

    def __init__(self, family: int, lam: float, anchor: float = 0.0, direction: str = "forward"):
        super().__init__()
        if family not in (1, 2, 3):
            raise InvalidTreeError("germ family must be 1, 2 or 3")
        if direction not in ("forward", "inverse"):
            raise InvalidTreeError("germ direction must be 'forward' or 'inverse'")
        self.family = family
        self.lam = float(lam)
        self.anchor = float(anchor)
        self.direction = direction
        lam_eff = self.effective_lambda
        # the singular set is where 1 - lam s^k = 0; keep the domain off it
        lo, hi = -math.inf, math.inf
        if lam_eff != 0:
            if family == 1:
                sing = 1.0 / lam_eff
                if sing > 0:
                    hi = sing
                else:
                    lo = sing
            elif family == 2 and lam_eff > 0:
                r = 1.0 / math.sqrt(lam_eff)
                lo, hi = -r, r
            elif family == 3:
                sing = math.copysign(abs(1.0 / lam_eff) ** (1.0 / 3.0), lam_eff)
                if sing > 0:
                    hi = sing
                else:
                    lo = sing
        self.domain = (self.anchor + lo, self.anchor + hi)

    @property
    def effective_lambda(self):
        return self.lam if self.direction == "forward" else -self.lam

    def _jet(self, x, order):
        lam = self.effective_lambda
        s = x - self.anchor
        if self.family == 1:
            u = 1 - lam * s
            if np.any(u <= 0):
                raise DomainError("q1 germ evaluated at or beyond its pole")
            out = [self.anchor + s / u]
            if order >= 1:
                out.append(1 / u**2)
            if order >= 2:
                out.append(2 * lam / u**3)
        elif self.family == 2:
            u = 1 - lam * s * s
            if np.any(u <= 0):
                raise DomainError("q2 germ evaluated at or beyond its singularity")
            r = pr.sqrt(u)
            out = [self.anchor + s / r]
            if order >= 1:
                out.append(1 / (u * r))
            if order >= 2:
                out.append(3 * lam * s / (u * u * r))
        else:
            u = 1 - lam * s**3
            if np.any(u <= 0):
                raise DomainError("q3 germ evaluated at or beyond its singularity")
            c = pr.cbrt(u)
            out = [self.anchor + s / c]
            if order >= 1:
                out.append(1 / (u * c))
            if order >= 2:
                out.append(4 * lam * s * s / (u * u * c))
        return out

    def inverse(self):
        return GermQ(self.family, self.lam, self.anchor, "inverse" if self.direction == "forward" else "forward")

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inverse().jet(y, order)

    def power(self, k: int) -> "GermQ":
        """Closed form of the k-th iterate (lam adds under composition)."""
        return GermQ(self.family, k * self.effective_lambda, self.anchor)

    def to_dict(self):
        return {"type": "germ_q", "family": self.family, "lam": self.lam, "anchor": self.anchor, "direction": self.direction}

    def __repr__(self):
        return f"GermQ({self.family}, {self.effective_lambda}, a={self.anchor})"


class HatGermQ1(DiffeoExpr):
    """The polynomial germ ``a + s + lam s^2`` with ``s = x - a``."""

    kind = "hat_germ_q1"

    def __init__(self, lam: float, anchor: float = 0.0):
        super().__init__()
        self.lam = float(lam)
        self.anchor = float(anchor)
        if self.lam != 0:
            crit = -1.0 / (2 * self.lam)
            self.domain = (self.anchor + crit, math.inf) if self.lam > 0 else (-math.inf, self.anchor + crit)
        else:
            self.domain = (-math.inf, math.inf)

    def _jet(self, x, order):
        s = x - self.anchor
        out = [x + self.lam * s * s]
        if order >= 1:
            out.append(1 + 2 * self.lam * s)
        if order >= 2:
            out.append(x * 0 + 2 * self.lam)
        return out

    def inverse_jet(self, y, order=1, bracket=None):
        if self.lam == 0:
            return Identity().jet(y, order)
        y = as_array(y)
        d = y - self.anchor
        disc = 1 + 4 * self.lam * d
        # stable root of lam s^2 + s - d = 0
        s = 2 * d / (1 + pr.sqrt(disc))
        x = self.anchor + s
        j = self.jet(x, max(order, 1) if order < 2 else 2)
        out = [x]
        if order >= 1:
            out.append(1 / j[1])
        if order >= 2:
            out.append(-j[2] / j[1] ** 3)
        return out

    def to_dict(self):
        return {"type": "hat_germ_q1", "lam": self.lam, "anchor": self.anchor}


class PolyMap(DiffeoExpr):
    """Polynomial map with ascending coefficients; must fix 0 and 1."""

    kind = "poly_map"

    def __init__(self, coeffs: Sequence[float], check: bool = True):
        super().__init__()
        self.coeffs = [float(c) for c in coeffs]
        if check:
            if abs(self.coeffs[0]) > 1e-12 or abs(sum(self.coeffs) - 1) > 1e-12:
                raise InvalidTreeError("polynomial map must fix 0 and 1")
            grid = np.linspace(0, 1, 1025)
            if np.any(self._jet(grid, 1)[1] <= 0):
                raise InvalidTreeError("polynomial map is not increasing on [0, 1]")

    def _jet(self, x, order):
        c = self.coeffs
        out = [_horner(c, x)]
        d1 = [k * v for k, v in enumerate(c)][1:]
        if order >= 1:
            out.append(_horner(d1, x) if d1 else x * 0)
        if order >= 2:
            d2 = [k * v for k, v in enumerate(d1)][1:]
            out.append(_horner(d2, x) if d2 else x * 0)
        return out

    def to_dict(self):
        return {"type": "poly_map", "coeffs": list(self.coeffs)}


def _horner(c, x):
    acc = x * 0 + c[-1]
    for v in c[-2::-1]:
        acc = acc * x + v
    return acc


class FlowTime(DiffeoExpr):
    """Time-t map of a polynomial vector field.

    ``method='exact'`` uses the closed-form time coordinate of the field;
    ``method='ode'`` integrates the ODE and its variational equation.
    """

    kind = "flow_time"

    def __init__(self, field, t: float, method: str = "exact", validate: bool = True):
        super().__init__()
        if method not in ("exact", "ode"):
            raise InvalidTreeError("flow method must be 'exact' or 'ode'")
        self.field = field.validate() if validate else field
        self.t = float(t)
        self.method = method
        self.has_d2 = method == "exact"

    def _jet(self, x, order):
        if self.t == 0:
            return Identity()._jet(x, order)
        if self.method == "ode":
            from .fields import integrate_field

            xf = pr.to_float(x)
            vals = [integrate_field(self.field, v, self.t) for v in xf.ravel()]
            out = [np.array([v[0] for v in vals]).reshape(xf.shape)]
            if order >= 1:
                out.append(np.array([v[1] for v in vals]).reshape(xf.shape))
            return out
        return self.field.flow_jet(x, self.t, order)

    def inverse(self):
        return FlowTime(self.field, -self.t, self.method, validate=False)

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inverse().jet(y, order)

    def to_dict(self):
        d = {"type": "flow_time", "field": self.field.to_dict(), "t": self.t}
        if self.method != "exact":
            d["method"] = self.method
        return d

    def __repr__(self):
        return f"FlowTime(t={self.t})"


class Compose(DiffeoExpr):
    """``Compose([f1, ..., fk])`` is f1 o ... o fk (fk applied first)."""

    kind = "compose"

    def __init__(self, parts: Sequence[DiffeoExpr]):
        super().__init__()
        flat = []
        for p in parts:
            if isinstance(p, Compose):
                flat.extend(p.parts)
            elif not isinstance(p, Identity):
                flat.append(p)
        self.parts = flat
        self.has_d2 = all(p.has_d2 for p in flat)
        if flat:
            self.domain = flat[-1].domain

    def _jet(self, x, order):
        jet = Identity()._jet(x, order)
        for f in reversed(self.parts):
            jet = _apply(f._jet(jet[0], order), jet, order)
        return jet

    def inverse(self):
        return Compose([p.inverse() for p in reversed(self.parts)])

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inverse().jet(y, order)

    def children(self):
        return tuple(self.parts)

    def to_dict(self):
        return {"type": "compose", "parts": [p.to_dict() for p in self.parts]}


def compose(*fs: DiffeoExpr) -> DiffeoExpr:
    out = Compose(list(fs))
    if not out.parts:
        return Identity()
    if len(out.parts) == 1:
        return out.parts[0]
    return out


class Inverse(DiffeoExpr):
    """Inverse of a node by safeguarded root finding."""

    kind = "inverse"

    def __init__(self, inner: DiffeoExpr):
        super().__init__()
        self.inner = inner
        self.has_d2 = inner.has_d2

    def _jet(self, x, order):
        return self.inner.inverse_jet(x, order)

    def inverse(self):
        return self.inner

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inner.jet(y, order)

    def children(self):
        return (self.inner,)

    def to_dict(self):
        return {"type": "inverse", "inner": self.inner.to_dict()}


class IntPower(DiffeoExpr):
    """n-fold iterate; negative n iterates the inverse."""

    kind = "int_power"

    def __init__(self, inner: DiffeoExpr, n: int):
        super().__init__()
        self.inner = inner
        self.n = int(n)
        self.has_d2 = inner.has_d2

    def _jet(self, x, order):
        step = self.inner if self.n >= 0 else self.inner.inverse()
        jet = Identity()._jet(x, order)
        for _ in range(abs(self.n)):
            jet = _apply(step._jet(jet[0], order), jet, order)
        return jet

    def inverse(self):
        return IntPower(self.inner, -self.n)

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inverse().jet(y, order)

    def children(self):
        return (self.inner,)

    def to_dict(self):
        return {"type": "int_power", "inner": self.inner.to_dict(), "n": self.n}


class Blend(DiffeoExpr):
    """``rho g + (1 - rho) f``; g is evaluated only where rho > 0."""

    kind = "blend"

    def __init__(self, f: DiffeoExpr, g: DiffeoExpr, bump: BumpFn, check: bool = True):
        super().__init__()
        self.f, self.g, self.bump = f, g, bump
        self.has_d2 = f.has_d2 and g.has_d2
        if check:
            self.check_valid()

    def check_valid(self, n=2049):
        lo, hi = self.bump.support
        lo, hi = max(lo, 0.0), min(hi, 1.0)
        grid = np.linspace(lo, hi, n)
        d = self._jet(grid, 1)[1]
        if not np.all(d > 0):
            raise InvalidTreeError("blend is not increasing on its bump support")

    def _jet(self, x, order):
        out = [v for v in self.f._jet(x, order)]
        rho = self.bump.jet(x, order)
        active = rho[0] > 0
        if not np.any(active):
            return out
        if not np.all(active):
            out = [v.copy() for v in out]
        xa = x[active]
        fa = [v[active] for v in out]
        ga = self.g._jet(xa, order)
        ra = [v[active] for v in rho]
        diff = ga[0] - fa[0]
        res = [fa[0] + ra[0] * diff]
        if order >= 1:
            res.append(fa[1] + ra[0] * (ga[1] - fa[1]) + ra[1] * diff)
        if order >= 2:
            res.append(fa[2] + ra[0] * (ga[2] - fa[2]) + 2 * ra[1] * (ga[1] - fa[1]) + ra[2] * diff)
        for k in range(order + 1):
            out[k][active] = res[k]
        return out

    def children(self):
        return (self.f, self.g)

    def to_dict(self):
        return {"type": "blend", "f": self.f.to_dict(), "g": self.g.to_dict(), "bump": self.bump.to_dict()}


class HomothetyConj(DiffeoExpr):
    """``a + s (g(a + (x - a)/s) - a)``: conjugation by the homothety of ratio s at a."""

    kind = "homothety_conj"

    def __init__(self, inner: DiffeoExpr, scale: float, anchor: float = 0.0):
        super().__init__()
        if not scale > 0:
            raise InvalidTreeError("homothety scale must be positive")
        self.inner, self.scale, self.anchor = inner, float(scale), float(anchor)
        self.has_d2 = inner.has_d2
        lo, hi = inner.domain
        self.domain = (self.anchor + self.scale * (lo - self.anchor), self.anchor + self.scale * (hi - self.anchor))

    def _jet(self, x, order):
        s, a = self.scale, self.anchor
        j = self.inner._jet(a + (x - a) / s, order)
        out = [a + s * (j[0] - a)]
        if order >= 1:
            out.append(j[1])
        if order >= 2:
            out.append(j[2] / s)
        return out

    def inverse(self):
        return HomothetyConj(self.inner.inverse(), self.scale, self.anchor)

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inverse().jet(y, order)

    def children(self):
        return (self.inner,)

    def to_dict(self):
        return {"type": "homothety_conj", "inner": self.inner.to_dict(), "scale": self.scale, "anchor": self.anchor}


class PiecewiseGlue(DiffeoExpr):
    """Piece i acts on ``[b_i, b_{i+1}]``; pieces must map each cell onto itself
    or agree at shared breakpoints."""

    kind = "piecewise_glue"

    def __init__(self, breakpoints: Sequence[float], pieces: Sequence[DiffeoExpr], check: bool = True):
        super().__init__()
        self.breakpoints = np.asarray([float(b) for b in breakpoints])
        self.pieces = list(pieces)
        if len(self.breakpoints) != len(self.pieces) + 1:
            raise InvalidTreeError("glue needs one more breakpoint than pieces")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise InvalidTreeError("glue breakpoints must increase")
        self.has_d2 = all(p.has_d2 for p in self.pieces)
        self.domain = (float(self.breakpoints[0]), float(self.breakpoints[-1]))
        if check:
            inner = self.breakpoints[1:-1]
            if len(inner):
                left = np.array([pr.to_float(self.pieces[i]._jet(np.array([b]), 0)[0])[0] for i, b in enumerate(inner)])
                right = np.array([pr.to_float(self.pieces[i + 1]._jet(np.array([b]), 0)[0])[0] for i, b in enumerate(inner)])
                if np.max(np.abs(left - right)) > 1e-9:
                    raise InvalidTreeError("glued pieces disagree at a breakpoint")

    def cell_index(self, x):
        xf = pr.to_float(x)
        return np.clip(np.searchsorted(self.breakpoints, xf, side="right") - 1, 0, len(self.pieces) - 1)

    def _jet(self, x, order):
        idx = self.cell_index(x)
        out = [x * 0 for _ in range(order + 1)]
        if not pr.is_extended(x):
            out = [np.zeros_like(x, dtype=float) for _ in range(order + 1)]
        for i, piece in enumerate(self.pieces):
            m = idx == i
            if not np.any(m):
                continue
            j = piece._jet(x[m], order)
            for k in range(order + 1):
                out[k][m] = j[k]
        return out

    def inverse_jet(self, y, order=1, bracket=None):
        # images of the breakpoints partition the target interval
        y = as_array(y)
        imgs = np.array([pr.to_float(self.pieces[min(i, len(self.pieces) - 1)]._jet(np.array([b]), 0)[0])[0]
                         for i, b in enumerate(self.breakpoints)])
        imgs[0], imgs[-1] = self.breakpoints[0], self.breakpoints[-1]
        idx = np.clip(np.searchsorted(imgs, pr.to_float(y), side="right") - 1, 0, len(self.pieces) - 1)
        out = [y * 0 for _ in range(order + 1)]
        if not pr.is_extended(y):
            out = [np.zeros_like(y, dtype=float) for _ in range(order + 1)]
        for i, piece in enumerate(self.pieces):
            m = idx == i
            if not np.any(m):
                continue
            j = piece.inverse_jet(y[m], order, bracket=(self.breakpoints[i], self.breakpoints[i + 1]))
            for k in range(order + 1):
                out[k][m] = j[k]
        return out

    def children(self):
        return tuple(self.pieces)

    def to_dict(self):
        return {"type": "piecewise_glue", "breakpoints": [float(b) for b in self.breakpoints], "pieces": [p.to_dict() for p in self.pieces]}
