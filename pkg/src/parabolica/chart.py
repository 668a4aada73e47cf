"""Abel coordinates at a parabolic endpoint of a component.

Let ``e`` be the endpoint and ``g`` whichever of ``f``, ``f^-1`` moves points
towards ``e``.  In the coordinate ``u = sigma (y - e) > 0`` the germ reads
``G(u) = u + sum_{k > m} c_k u^k``.  A truncated formal Abel coordinate

    Phi(u) = sum_{j<=m} beta_j u^-j + rho log u + sum_{i<=J} gamma_i u^i

with ``Phi(G(u)) - Phi(u) - 1 = O(u^{m+J+1})`` is fitted to the germ, and

    A(x) = lim_n s (Phi(U_n(x)) - Phi(U_n(p))),    U_n = sigma (g^n - e)

with ``s = +1`` when ``g = f``.  The depth doubles until successive values
agree to the requested tolerance.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import precision as pr
from .diffeo import DiffeoExpr, as_array
from .errors import ConvergenceError, DomainError, InvalidTreeError, SecondDerivativeUnavailable
from .roots import solve_increasing

__all__ = ["FatouChart", "ConvergenceWarning", "chart_for", "component_of", "formal_abel_coefficients"]


#: largest weighted residual of the germ fit accepted without deepening the window
FIT_RESIDUAL = 1e-11
#: a depth-doubling delta within this factor of tol counts once deeper runs only add noise
NOISE_FACTOR = 100.0


class ConvergenceWarning(UserWarning):
    pass


# -- power series helpers (index i holds the coefficient of u^i) -------------
def _mul(a, b, n):
    return np.convolve(a, b)[:n]


def _log1p_series(w, n):
    out = np.zeros(n)
    term = np.zeros(n)
    term[0] = 1.0
    for i in range(1, n):
        term = _mul(term, w, n)
        if not np.any(term):
            break
        out += (-1) ** (i + 1) * term / i
    return out


def _exp_series(a, n):
    out = np.zeros(n)
    out[0] = 1.0
    term = out.copy()
    for i in range(1, n):
        term = _mul(term, a, n) / i
        if not np.any(term):
            break
        out += term
    return out


def formal_abel_coefficients(c, m: int, J: int):
    """Coefficients (beta_1..beta_m, rho, gamma_1..gamma_J) of the formal Abel
    coordinate of ``G(u) = u + sum_k c[k - m - 1] u^k`` (k = m+1, m+2, ...)."""
    n = m + J + 1
    w = np.zeros(n + m + 1)
    for idx, ck in enumerate(c):
        k = m + 1 + idx
        if k - 1 < len(w):
            w[k - 1] = ck
    L = len(w)
    lg = _log1p_series(w, L)
    cols = []
    for j in range(m, 0, -1):  # beta_j u^-j ((1+w)^-j - 1)
        s = _exp_series(-j * lg, L)
        s[0] -= 1.0
        cols.append(("beta", j, s[j:j + n]))
    cols.append(("rho", 0, lg[:n]))
    for i in range(1, J + 1):  # gamma_i u^i ((1+w)^i - 1)
        s = _exp_series(i * lg, L)
        s[0] -= 1.0
        shifted = np.concatenate([np.zeros(i), s])[:n]
        cols.append(("gamma", i, shifted))
    M = np.array([col[2] for col in cols]).T
    rhs = np.zeros(n)
    rhs[0] = 1.0
    sol = np.linalg.solve(M, rhs)
    beta = np.zeros(m + 1)
    gamma = np.zeros(J + 1)
    rho = 0.0
    for (kind, j, _), v in zip(cols, sol):
        if kind == "beta":
            beta[j] = v
        elif kind == "rho":
            rho = v
        else:
            gamma[j] = v
    return beta, rho, gamma


@dataclass
class _Germ:
    m: int
    coeffs: np.ndarray  # c_{m+1}, c_{m+2}, ...
    beta: np.ndarray
    rho: float
    gamma: np.ndarray

    def phi(self, u):
        out = self.rho * pr.log(u)
        for j in range(1, self.m + 1):
            out = out + self.beta[j] * u ** (-j)
        for i in range(1, len(self.gamma)):
            out = out + self.gamma[i] * u**i
        return out

    def dphi(self, u):
        out = self.rho / u
        for j in range(1, self.m + 1):
            out = out - j * self.beta[j] * u ** (-j - 1)
        for i in range(1, len(self.gamma)):
            out = out + i * self.gamma[i] * u ** (i - 1)
        return out

    def phi_inverse(self, target, u_hi):
        """Solve Phi(u) = target on (0, u_hi]; Phi decreases there."""
        target = as_array(target)
        guess = (self.beta[self.m] / np.maximum(pr.to_float(target), 1e-300)) ** (1.0 / self.m)
        guess = np.minimum(guess, u_hi)
        if pr.is_extended(target):
            guess = pr.lift_like(guess, target)
        lo = np.zeros(target.shape)
        hi = np.full(target.shape, 4.0 * u_hi)
        if pr.is_extended(target):
            lo, hi = pr.lift_like(lo, target), pr.lift_like(hi, target)

        def fun(v, idx):
            # -Phi(u) is increasing in u
            with np.errstate(divide="ignore", invalid="ignore"):
                return -self.phi(v), -self.dphi(v)

        return solve_increasing(fun, -target, lo, hi, x0=guess)


@dataclass
class ChartDiagnostics:
    rows: list = field(default_factory=list)  # (n, A_n, delta)
    converged: bool = True
    last_delta: float = 0.0
    depth: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "A_n", "delta"])
        for n, a, d in self.rows:
            w.writerow([n, repr(float(a)), "" if d is None else repr(float(d))])
        return buf.getvalue()


class FatouChart:
    """Abel coordinate of f on the component (a, b) at one of its endpoints."""

    def __init__(self, f: DiffeoExpr, component, side: str, p: float | None = None, *,
                 tol: float = 1e-8, depth_cap: int = 100_000, n0: int = 64, precision=None,
                 J: int = 6, fit_terms: int = 10, n_fit: int = 32):
        if side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        a, b = float(component[0]), float(component[1])
        if not a < b:
            raise ValueError("component must satisfy a < b")
        self.f = f
        self.a, self.b = a, b
        self.side = side
        self.p = 0.5 * (a + b) if p is None else float(p)
        if not a < self.p < b:
            raise DomainError("base point must lie inside the component")
        self.tol = tol
        self.depth_cap = int(depth_cap)
        self.n0 = int(n0)
        self.n_fit = int(n_fit)
        self.precision = pr.Precision.parse(precision)
        self.J = J
        self.fit_terms = fit_terms
        self.endpoint = a if side == "left" else b
        self.sigma = 1.0 if side == "left" else -1.0
        fp = float(pr.to_float(f.jet(np.array([self.p]), 0)[0])[0])
        if fp == self.p:
            raise InvalidTreeError("base point is fixed; component is not free")
        pushes_right = fp > self.p
        towards_endpoint = pushes_right == (side == "right")
        self.g = f if towards_endpoint else f.inverse()
        self.s = 1.0 if towards_endpoint else -1.0
        self.guard = 1e3 * self.precision.eps
        with self.precision.context():
            # deepen the fit window until the germ series explains the samples:
            # a perturbation of f inside the window shows up as a large residual
            while True:
                self.germ, resid = self._fit_germ()
                if resid <= FIT_RESIDUAL or 2 * self.n_fit > self.depth_cap // 8:
                    break
                self.n_fit *= 2
            if resid > FIT_RESIDUAL:
                warnings.warn(f"germ fit residual {resid:.3g} above {FIT_RESIDUAL:g}", ConvergenceWarning)
            self.n0 = max(self.n0, 2 * self.n_fit)

    # -- germ fit ----------------------------------------------------------
    def _u(self, y):
        return self.sigma * (y - self.endpoint)

    def _from_u(self, u):
        return self.endpoint + self.sigma * u

    def _orbit_u(self, x, n):
        y = as_array(x)
        for _ in range(n):
            y = self.g.jet(y, 0)[0]
        return self._u(y)

    def _fit_germ(self) -> _Germ:
        e = self.endpoint
        u_hi = float(self._orbit_u(np.array([self.p]), self.n_fit)[0])
        if not u_hi > 0:
            raise ConvergenceError("orbit of the base point left the component")
        u_lo = max(u_hi / 32.0, 1e4 * self.guard)
        us = np.geomspace(u_lo, u_hi, 64)
        ys = self._from_u(us)
        ua = self._u(ys)  # exact offsets of the representable sample points
        d = self.sigma * (pr.to_float(self.g.jet(ys, 0)[0]) - ys)
        w = d / ua  # G(u)/u - 1
        if np.any(w >= 0):
            raise ConvergenceError("germ does not move points towards the endpoint")
        c2 = None
        m = None
        try:
            d2 = float(pr.to_float(self.g.jet(np.array([e]), 2)[2])[0])
            if abs(d2) > 1e-9:
                m = 1
                c2 = self.sigma * d2 / 2.0
        except SecondDerivativeUnavailable:
            pass
        if m is None:
            slope = np.polyfit(np.log(ua), np.log(-w), 1)[0]
            m = max(1, int(round(slope)))
        scale = u_hi
        t = ua / scale
        k = np.arange(self.fit_terms)
        V = t[:, None] ** (m + k[None, :])  # w = sum c_{m+1+k} u^{m+k}
        rhs = w.copy()
        if c2 is not None:
            rhs = rhs - c2 * ua
            V = V[:, 1:]
        # sample noise is relative near 0 and absolute near 1
        wt = np.ones_like(ua) if self.endpoint == 0.0 else ua / u_hi
        sol, *_ = np.linalg.lstsq(V * wt[:, None], rhs * wt, rcond=None)
        resid = float(np.max(np.abs((V @ sol - rhs) * wt)))
        coef = sol / scale ** (m + (k[1:] if c2 is not None else k))
        if c2 is not None:
            coef = np.concatenate([[c2], coef])
        if not coef[0] < 0:
            raise ConvergenceError("fitted germ is not parabolic towards the endpoint")
        beta, rho, gamma = formal_abel_coefficients(coef[: self.J + 2], m, self.J)
        self.u_fit = (u_lo, u_hi)
        return _Germ(m, coef, beta, rho, gamma), resid

    # -- evaluation --------------------------------------------------------
    def _check_inside(self, x):
        xf = pr.to_float(x)
        if np.any(xf <= self.a + self.guard) or np.any(xf >= self.b - self.guard):
            raise DomainError("point outside the component or inside the endpoint guard zone")

    def _run(self, x, want_deriv=False, history_index=None):
        """A(x) (and A'(x)) with per-point depth doubling."""
        with self.precision.context():
            x = as_array(x)
            shape = x.shape
            x = x.ravel()
            if self.precision.extended:
                x = self.precision.asarray(x)
            self._check_inside(x)
            pts = np.concatenate([x, self.precision.asarray([self.p]) if self.precision.extended else np.array([self.p])])
            y = pts.copy()
            logd = pts * 0
            n = 0
            target = max(self.n0 // 2, 8)
            prev = None
            est = x * 0
            der = x * 0
            done = np.zeros(len(x), dtype=bool)
            best = np.full(len(x), np.inf)
            best_est = x * 0
            best_der = x * 0
            diag = ChartDiagnostics()
            hist = []
            while True:
                while n < target:
                    j = self.g.jet(y, 1 if want_deriv else 0)
                    if want_deriv:
                        logd = logd + pr.log(j[1])
                    y = j[0]
                    n += 1
                u = self._u(y)
                if np.any(pr.to_float(u) <= 0):
                    raise ConvergenceError("orbit reached the endpoint (underflow)", {"depth": n})
                phi = self.germ.phi(u)
                cur = self.s * (phi[:-1] - phi[-1])
                if want_deriv:
                    dcur = self.s * self.sigma * self.germ.dphi(u[:-1]) * pr.exp(logd[:-1])
                delta = None if prev is None else np.abs(pr.to_float(cur - prev))
                if want_deriv and prev is not None:
                    delta = np.maximum(delta, np.abs(pr.to_float((dcur - dprev) / dcur)))
                if history_index is not None:
                    hist.append((n, cur[history_index], None if delta is None else delta[history_index]))
                newly = np.zeros(len(x), dtype=bool) if delta is None else (delta < self.tol) & ~done
                est[newly] = cur[newly]
                if want_deriv:
                    der[newly] = dcur[newly]
                done |= newly
                if delta is not None:
                    # past the rounding-noise floor deltas grow with depth: keep the
                    # best estimate if it came within NOISE_FACTOR of the tolerance
                    better = delta < best
                    best_est[better] = cur[better]
                    if want_deriv:
                        best_der[better] = dcur[better]
                    best = np.where(better, delta, best)
                    floor = ~done & (delta > 2 * best) & (best < NOISE_FACTOR * self.tol)
                    est[floor] = best_est[floor]
                    if want_deriv:
                        der[floor] = best_der[floor]
                    done |= floor
                if done.all():
                    break
                if 2 * target > self.depth_cap:
                    diag.converged = False
                    est[~done] = cur[~done]
                    if want_deriv:
                        der[~done] = dcur[~done]
                    break
                prev = cur
                if want_deriv:
                    dprev = dcur
                target *= 2
            diag.depth = n
            diag.rows = hist
            diag.last_delta = 0.0 if delta is None else float(np.max(delta))
            if history_index is not None and len(hist) > 3:
                tail = [r[2] for r in hist[1:]]
                if any(t2 > t1 * 1.5 and t1 > self.tol for t1, t2 in zip(tail, tail[1:])):
                    warnings.warn("non-monotone chart convergence tail", ConvergenceWarning)
            return est.reshape(shape), (der.reshape(shape) if want_deriv else None), diag

    def __call__(self, x, strict: bool = True):
        est, _, diag = self._run(x)
        if strict and not diag.converged:
            raise ConvergenceError(
                f"chart did not converge within depth {diag.depth}; last delta {diag.last_delta:.3g}",
                {"depth": diag.depth, "last_delta": diag.last_delta},
            )
        return est if np.ndim(est) else est[()]

    def jet(self, x, strict: bool = True):
        """(A(x), A'(x))."""
        est, der, diag = self._run(x, want_deriv=True)
        if strict and not diag.converged:
            raise ConvergenceError(
                f"chart did not converge within depth {diag.depth}; last delta {diag.last_delta:.3g}",
                {"depth": diag.depth, "last_delta": diag.last_delta},
            )
        return est, der

    def diagnostics(self, x) -> ChartDiagnostics:
        """Per-depth estimates (n, A_n(x), delta) at a single point x."""
        _, _, diag = self._run(np.array([float(np.ravel(x)[0])]), history_index=0)
        return diag

    def inverse(self, t, polish: bool = True):
        """Point x with A(x) = t."""
        return self._inverse(t, polish)[0]

    def inverse_jet(self, t):
        """(x, dx/dt) with A(x) = t; the derivative comes from the polishing step."""
        x, da = self._inverse(t, True)
        return x, 1.0 / da

    def _inverse(self, t, polish):
        with self.precision.context():
            t = as_array(t)
            shape = t.shape
            t = t.ravel()
            if self.precision.extended:
                t = self.precision.asarray(t)
            # points behind p (in the direction of g) need extra pull-back depth
            behind = float(np.max(-self.s * pr.to_float(t))) if t.size else 0.0
            n = self.n0 + max(0, int(np.ceil(behind)))
            p0 = self.precision.asarray([self.p]) if self.precision.extended else np.array([self.p])
            phi_p = self.germ.phi(self._orbit_u(p0, n))[0]
            u_star = self.germ.phi_inverse(phi_p + self.s * t, self.u_fit[1] * 4)
            y = self._from_u(u_star)
            ginv = self.g.inverse()
            for _ in range(n):
                y = ginv.jet(y, 0)[0]
            x = y
            self._check_inside(x)
            da = None
            if polish:
                # Newton on A; the last derivative is taken within 1e-9 of the answer
                for _ in range(4):
                    a, da = self.jet(x)
                    step = (a - t) / da
                    x = x - step
                    self._check_inside(x)
                    if np.max(np.abs(pr.to_float(step))) <= 1e-9:
                        break
                da = da.reshape(shape)
            out = x.reshape(shape)
            return (out if np.ndim(out) else out[()]), da


def component_of(f: DiffeoExpr, x: float, report=None):
    """Component (a, b) of f containing x."""
    from .ops import fixed_points

    report = report if report is not None else f.memo(("fixed_points",), lambda: fixed_points(f))
    locs = np.array(report.locations)
    k = int(np.searchsorted(locs, x, side="right"))
    if k == 0 or k >= len(locs) or locs[k - 1] == x:
        raise DomainError("point is fixed or outside [0, 1]")
    return float(locs[k - 1]), float(locs[k])


def chart_for(f: DiffeoExpr, side: str, p: float | None = None, component=None, *,
              tol: float = 1e-8, depth_cap: int = 100_000, precision=None) -> FatouChart:
    """Cached chart of f; the cache key covers every parameter of the chart."""
    if component is None:
        component = component_of(f, 0.5 if p is None else p)
    prec = pr.Precision.parse(precision)
    key = ("chart", side, p, tuple(component), tol, depth_cap, prec.bits)
    return f.memo(key, lambda: FatouChart(f, component, side, p, tol=tol, depth_cap=depth_cap, precision=prec))
