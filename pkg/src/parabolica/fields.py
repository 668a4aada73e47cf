"""Polynomial vector fields on [0, 1] and their exact flows.

A field is stored in factored form ``X(x) = scale * prod P_i(x)**m_i`` so that
values near a zero keep full relative accuracy.  Flow maps use the time
coordinate ``T(x, y) = int_x^y du / X(u)``, integrated in closed form by
partial fractions; the unknown of the flow equation is the displacement
``y - x``, which is what deep parabolic orbits need to resolve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy
from scipy.integrate import solve_ivp

from . import precision as pr
from .errors import DomainError, InvalidTreeError, UnknownKeyError
from .roots import solve_increasing

__all__ = [
    "VectorField1D",
    "poly_field",
    "product_field",
    "field_from_dict",
    "model_field",
    "integrate_field",
]


def _horner(coeffs, x):
    """Evaluate an ascending-coefficient polynomial."""
    acc = x * 0 + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * x + c
    return acc


def _poly_deriv(coeffs):
    return [k * c for k, c in enumerate(coeffs)][1:] or [0.0]


def _divided_difference(coeffs, x, y):
    """(P(y) - P(x)) / (y - x) computed without cancellation."""
    out = x * 0
    for k, c in enumerate(coeffs):
        if k == 0 or c == 0:
            continue
        s = 0
        for i in range(k):
            s = s + x**i * y ** (k - 1 - i)
        out = out + c * s
    return out


def _factor_poly(coeffs):
    """Factor an ascending-coefficient polynomial over Q into (factor, multiplicity)."""
    coeffs = [float(c) for c in coeffs]
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    if len(coeffs) == 1:
        return coeffs[0], []
    t = sympy.Symbol("t")
    expr = sum(sympy.nsimplify(c, rational=True) * t**k for k, c in enumerate(coeffs))
    content, parts = sympy.factor_list(sympy.Poly(expr, t))
    out = []
    for poly, mult in parts:
        asc = [float(c) for c in reversed(poly.all_coeffs())]
        out.append((asc, int(mult)))
    return float(content), out


def _prod(values):
    out = 1
    for v in values:
        out = out * v
    return out


def _real(z):
    if isinstance(z, np.ndarray) and z.dtype == object:
        flat = [v.real if hasattr(v, "real") else v for v in z.ravel()]
        out = np.empty(len(flat), dtype=object)
        out[:] = flat
        return out.reshape(z.shape)
    return np.real(z)


@dataclass(frozen=True, eq=False)
class VectorField1D:
    """``X(x) = scale * prod factor(x)**power`` with ascending coefficient lists."""

    factors: tuple = ()
    scale: float = 1.0
    spec: dict = field(default=None, compare=False)

    def __post_init__(self):
        if self.scale == 0:
            raise InvalidTreeError("vector field with zero scale")

    # -- evaluation ---------------------------------------------------
    @cached_property
    def _elementary(self):
        """Factor list with multiplicities unrolled, plus derivative coefficients."""
        elems = []
        for coeffs, power in self.factors:
            d1 = _poly_deriv(list(coeffs))
            d2 = _poly_deriv(d1)
            elems.extend([(list(coeffs), d1, d2)] * power)
        return elems

    def __call__(self, x):
        return self.derivs(x, 0)[0]

    def derivs(self, x, order=2):
        """Values of X, X', X'' (up to ``order``) by the product rule."""
        e = self._elementary
        n = len(e)
        vals = [_horner(c, x) for c, _, _ in e]
        out = [self.scale * _prod(vals) + x * 0]
        if order >= 1:
            d1 = [_horner(c, x) for _, c, _ in e]
            s = x * 0
            for j in range(n):
                s = s + d1[j] * _prod(vals[:j] + vals[j + 1:])
            out.append(self.scale * s)
        if order >= 2:
            d2 = [_horner(c, x) for _, _, c in e]
            s = x * 0
            for j in range(n):
                s = s + d2[j] * _prod(vals[:j] + vals[j + 1:])
                for k in range(n):
                    if k != j:
                        rest = [vals[i] for i in range(n) if i not in (j, k)]
                        s = s + d1[j] * d1[k] * _prod(rest)
            out.append(self.scale * s)
        return out

    def dd_prime(self, x, y):
        """Divided difference (X'(y) - X'(x)) / (y - x), cancellation free."""
        e = self._elementary
        n = len(e)
        vx = [_horner(c, x) for c, _, _ in e]
        vy = [_horner(c, y) for c, _, _ in e]
        dx = [_horner(c, x) for _, c, _ in e]
        dy = [_horner(c, y) for _, c, _ in e]
        ddv = [_divided_difference(c, x, y) for c, _, _ in e]
        ddd = [_divided_difference(c, x, y) for _, c, _ in e]
        total = x * 0
        for j in range(n):
            # term_j = P_j' * prod_{i != j} P_i; Leibniz rule for divided differences
            fx = [dx[j]] + [vx[i] for i in range(n) if i != j]
            fy = [dy[j]] + [vy[i] for i in range(n) if i != j]
            fd = [ddd[j]] + [ddv[i] for i in range(n) if i != j]
            for i in range(n):
                total = total + _prod(fx[:i]) * fd[i] * _prod(fy[i + 1:])
        return self.scale * total

    # -- zero set ----------------------------------------------------
    @cached_property
    def _roots(self):
        """All complex roots with multiplicity, and the leading constant."""
        lead = self.scale
        roots = []
        for coeffs, power in self.factors:
            c = [float(v) for v in coeffs]
            while len(c) > 1 and c[-1] == 0:
                c.pop()
            lead *= c[-1] ** power
            if len(c) == 1:
                continue
            rs = [-c[0] / c[1]] if len(c) == 2 else list(np.roots(c[::-1]))
            for r in rs:
                r = complex(r)
                if abs(r.imag) <= 1e-14 * max(1.0, abs(r.real)):
                    r = complex(r.real, 0.0)
                roots.append((r, power))
        return lead, roots

    @cached_property
    def zeros(self):
        """Real zeros in [0, 1] as sorted (location, multiplicity) pairs."""
        _, roots = self._roots
        out = {}
        for r, m in roots:
            if r.imag == 0 and -1e-12 <= r.real <= 1 + 1e-12:
                loc = min(max(r.real, 0.0), 1.0) + 0.0
                out[loc] = out.get(loc, 0) + m
        return sorted(out.items())

    def validate(self):
        locs = [z for z, _ in self.zeros]
        if not locs or locs[0] != 0.0 or locs[-1] != 1.0:
            raise InvalidTreeError("vector field must vanish at 0 and 1")
        for z, m in self.zeros:
            if m < 2:
                raise InvalidTreeError(f"zero at {z} has order {m}; parabolic zeros need order >= 2")
        return self

    @cached_property
    def _partial_fractions(self):
        """[(root, [A_1, ..., A_m])] with 1/X = sum_k A_k (u - root)^-k."""
        lead, roots = self._roots
        out = []
        for idx, (r, m) in enumerate(roots):
            series = np.zeros(m, dtype=complex)
            series[0] = 1.0 / lead
            for jdx, (rj, mj) in enumerate(roots):
                if jdx == idx:
                    continue
                d = r - rj
                # (d + h)^-mj = d^-mj * sum_k binom(mj + k - 1, k) (-h/d)^k
                term = np.array([math.comb(mj + k - 1, k) * (-1) ** k / d**k for k in range(m)], dtype=complex)
                term *= d ** (-mj)
                series = np.convolve(series, term)[:m]
            out.append((r, [series[m - k] for k in range(1, m + 1)]))
        return out

    def time_between(self, x, delta):
        """Flow time from x to x + delta, and its derivative 1/X(x + delta)."""
        y = x + delta
        total = 0
        for r, coeffs in self._partial_fractions:
            rr = r.real if r.imag == 0 else r
            a = y - rr
            b = x - rr
            term = coeffs[0] * pr.log1p(delta / b)
            for k in range(2, len(coeffs) + 1):
                j = k - 1
                s = 0
                for i in range(j):
                    s = s + a**i * b ** (j - 1 - i)
                term = term + coeffs[k - 1] / (1 - k) * (-delta * s / (a**j * b**j))
            total = total + term
        return _real(total), 1.0 / self(y)

    def component(self, x):
        """Endpoints (lo, hi) of the zero-free component containing each x."""
        locs = np.array([z for z, _ in self.zeros], dtype=float)
        xf = pr.to_float(x)
        k = np.searchsorted(locs, xf, side="right")
        lo = locs[np.clip(k - 1, 0, len(locs) - 1)]
        hi = locs[np.clip(k, 0, len(locs) - 1)]
        return lo, hi

    # -- flow ---------------------------------------------------------
    def flow_jet(self, x, t, order=1):
        """Time-t map of the flow and its first ``order`` derivatives at x."""
        x = np.asarray(x)
        if x.ndim == 0:
            return [v.reshape(()) for v in self.flow_jet(x.reshape(1), t, order)]
        if t == 0:
            return [x.copy(), x * 0 + 1, x * 0][: order + 1]
        X0, X1, X2 = self.derivs(x, 2)
        lo, hi = self.component(x)
        if pr.is_extended(x):
            lo, hi = pr.lift_like(lo, x), pr.lift_like(hi, x)
        moving = X0 != 0
        delta = x * 0
        if np.any(moving):
            xm = x[moving]
            Xm, X1m, X2m = X0[moving], X1[moving], X2[moving]
            # the time coordinate is monotone with the sign of X
            sgn = np.where(Xm > 0, 1.0, -1.0)
            guess = t * Xm + 0.5 * t * t * Xm * X1m + t**3 / 6 * (Xm * X1m**2 + Xm**2 * X2m)
            lo_d = lo[moving] - xm
            hi_d = hi[moving] - xm

            def fun(d, idx):
                tv, dt = self.time_between(xm[idx], d)
                return sgn[idx] * tv, sgn[idx] * dt

            tgt = sgn * t
            if pr.is_extended(xm):
                tgt = pr.lift_like(tgt, xm)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                delta[moving] = solve_increasing(fun, tgt, lo_d, hi_d, x0=guess)
        y = x + delta
        out = [y]
        if order >= 1:
            Xy = self(y)
            safe = np.where(moving, X0, 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                df = np.where(moving, Xy / safe, pr.exp(t * X1))
            out.append(df)
        if order >= 2:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                d2_moving = df * (delta / safe) * self.dd_prime(x, y)
                # at a zero r: f_t(x) = r + e^{lt}(x - r) + ..., D2 = X''(r)(e^{2lt} - e^{lt})/l
                lam = X1
                lam_safe = np.where(lam == 0, 1, lam)
                at_zero = np.where(lam == 0, t * X2, X2 * (pr.exp(2 * t * lam) - pr.exp(t * lam)) / lam_safe)
            out.append(np.where(moving, d2_moving, at_zero))
        return out

    # -- serialisation ------------------------------------------------
    def to_dict(self):
        if self.spec is not None:
            return self.spec
        return {
            "type": "product_field",
            "scale": self.scale,
            "factors": [{"type": "poly_field", "coeffs": list(c), "power": p} for c, p in self.factors],
        }

    def __repr__(self):
        return f"VectorField1D({self.to_dict()})"


def poly_field(coeffs, scale=1.0):
    """Field from ascending polynomial coefficients, factored exactly over Q."""
    content, parts = _factor_poly(coeffs)
    spec = {"type": "poly_field", "coeffs": [float(c) for c in coeffs]}
    if scale != 1.0:
        spec["scale"] = float(scale)
    return VectorField1D(tuple((tuple(c), p) for c, p in parts), scale * content, spec=spec)


def product_field(factors, scale=1.0):
    """Product of fields, given as field objects or (field, power) pairs."""
    pairs = [item if isinstance(item, tuple) else (item, 1) for item in factors]
    total = scale
    merged = {}
    for fld, power in pairs:
        total *= fld.scale**power
        for c, p in fld.factors:
            merged[tuple(c)] = merged.get(tuple(c), 0) + p * power
    spec = {
        "type": "product_field",
        "scale": float(scale),
        "factors": [dict(fld.to_dict(), power=int(power)) for fld, power in pairs],
    }
    return VectorField1D(tuple(merged.items()), total, spec=spec)


def _check_keys(spec, allowed, path):
    extra = set(spec) - allowed
    if extra:
        raise UnknownKeyError(f"unknown key(s) {sorted(extra)} at {path}")


def field_from_dict(spec, path="$"):
    kind = spec.get("type")
    if kind == "poly_field":
        _check_keys(spec, {"type", "coeffs", "scale", "power"}, path)
        return poly_field(spec["coeffs"], spec.get("scale", 1.0))
    if kind == "product_field":
        _check_keys(spec, {"type", "factors", "scale", "power"}, path)
        parts = [
            (field_from_dict(f, f"{path}.factors[{i}]"), int(f.get("power", 1)))
            for i, f in enumerate(spec["factors"])
        ]
        return product_field(parts, spec.get("scale", 1.0))
    raise InvalidTreeError(f"unknown vector field type {kind!r} at {path}")


def model_field(c=1.0, interior=None, transversal=True):
    """``c x^2 (1-x)^2``, optionally times ``(x - r)^3`` (sign change, parabolic)
    or ``(x - r)^2`` (one-sided)."""
    parts = [(poly_field([0.0, 1.0]), 2), (poly_field([1.0, -1.0]), 2)]
    if interior is not None:
        parts.append((poly_field([-interior, 1.0]), 3 if transversal else 2))
    return product_field(parts, c)


def integrate_field(fld, x0, t, rtol=1e-13, atol=1e-15):
    """Independent ODE route: integrate dx/ds = X(x) with its variational equation.

    Returns ``(x(t), Dx(t)/Dx0)``.  Used as an oracle for the closed-form flow.
    """
    if t == 0:
        return float(x0), 1.0

    def rhs(_s, z):
        X0, X1 = fld.derivs(np.array([z[0]]), 1)
        return [float(X0[0]), float(X1[0])]

    sol = solve_ivp(rhs, (0.0, float(t)), [float(x0), 0.0], method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise DomainError(f"ODE integration failed: {sol.message}")
    return float(sol.y[0, -1]), float(np.exp(sol.y[1, -1]))
