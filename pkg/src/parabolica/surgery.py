"""Perturbations built from Abel coordinates: Mather surgery, fragmentation of
circle maps, trivialization of the Mather invariant, conjugacies to powers and
insertion of a small map near 0."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Chebyshev

from . import precision as pr
from .chart import chart_for, component_of
from .circle import (
    CircleLift,
    ComposedLift,
    DampedLift,
    InverseLift,
    IsotopyLift,
    SupportedCircleDiffeo,
    Translation,
    lift_from_dict,
)
from .diffeo import Compose, DiffeoExpr, HomothetyConj, PiecewiseGlue, as_array
from .errors import DomainError, InvalidTreeError
from .flow import richardson_d2
from .roots import solve_increasing
from .serialize import register

__all__ = [
    "ChartConjugate",
    "ChartScale",
    "mather_surgery",
    "multi_surgery",
    "FragmentResult",
    "fragment",
    "place_supports",
    "select_beta",
    "trivialize_mather",
    "TrivializeReport",
    "conjugacy_from_flows",
    "conjugacy_residual",
    "insert_scaled",
]


class CellCoordinate:
    """Chebyshev interpolant of an Abel coordinate on one cell [lo, hi]."""

    def __init__(self, lo: float, hi: float, coef, exact=None):
        self.lo, self.hi = lo, hi
        self.cheb = Chebyshev(coef, domain=[lo, hi])
        self.dcheb = self.cheb.deriv()
        self.exact = exact  # direct chart, used when interpolation is not certified

    def jet(self, x):
        if self.exact is not None:
            a, da = self.exact.jet(x)
            return pr.to_float(a), pr.to_float(da)
        return self.cheb(x), self.dcheb(x)

    def inverse_jet(self, t):
        if self.exact is not None:
            x, dx = self.exact.inverse_jet(t)
            return pr.to_float(x), pr.to_float(dx)
        pad = 1e-3 * (self.hi - self.lo)
        lo = np.full(np.shape(t), self.lo - pad)
        hi = np.full(np.shape(t), self.hi + pad)
        x = solve_increasing(lambda z, idx: (self.cheb(z), self.dcheb(z)), np.asarray(t, dtype=float), lo, hi)
        return x, 1.0 / self.dcheb(x)


def _cheb_nodes(lo, hi, n):
    k = np.arange(n)
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * (k + 0.5) / n)


def _cell_coordinates(B, cells, tol: float = 1e-10, start: int = 32, max_nodes: int = 512,
                      floor: float = 1e-8):
    """Certified interpolants of B on every cell, built from batched chart runs.

    A degree is accepted once the interpolant through n nodes matches B at the
    2n-node set to ``tol``.  A cell that never gets there keeps its most
    accurate interpolant if that one is within ``floor`` (the chart's own
    accuracy), else the direct chart.
    """
    out = [None] * len(cells)
    pending = list(range(len(cells)))
    n = start
    prev = {}
    best = {}
    while pending and n <= max_nodes:
        nodes = [_cheb_nodes(*cells[i], n) for i in pending]
        vals = pr.to_float(B(np.concatenate(nodes))).reshape(len(pending), n)
        still = []
        for row, i in enumerate(pending):
            lo, hi = cells[i]
            coef = Chebyshev.fit(nodes[row], vals[row], n - 1, domain=[lo, hi]).coef
            if i in prev:
                err = np.max(np.abs(Chebyshev(prev[i], domain=[lo, hi])(nodes[row]) - vals[row]))
                if err <= tol:
                    out[i] = CellCoordinate(lo, hi, coef)
                    continue
                if err < best.get(i, (np.inf,))[0]:
                    best[i] = (err, prev[i])
            prev[i] = coef
            still.append(i)
        pending = still
        n *= 2
    for i in pending:
        err, coef = best.get(i, (np.inf, prev[i]))
        out[i] = CellCoordinate(*cells[i], coef, exact=None if err <= floor else B)
    for c in out:
        if c.exact is None:
            x = np.linspace(c.lo, c.hi, 1025)
            if np.any(c.dcheb(x) <= 0):
                c.exact = B
    return out


class ChartConjugate(DiffeoExpr):
    """``x -> B^-1(phi_i(B(x)))`` where B(x) lies in the support of phi_i, else x.

    B is the right Abel coordinate of ``f`` with B(p) = 0.  Each phi_i is
    supported in an interval (alpha_i - 1, alpha_i); these must be disjoint.
    On each cell B is replaced by its certified Chebyshev interpolant, so the
    node is an exact conjugate of phi_i by a fixed smooth coordinate.
    """

    kind = "chart_conjugate"

    def __init__(self, f: DiffeoExpr, pieces, p: float | None = None, component=None, tol: float = 1e-8,
                 _geometry=None):
        super().__init__()
        self.f = f
        self.pieces = list(pieces)
        self.p = p
        self.tol = tol
        self.component = tuple(component) if component is not None else component_of(f, 0.5 if p is None else p)
        spans = sorted((s.alpha - 1.0, s.alpha) for s in self.pieces)
        for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
            if a1 < b0:
                raise InvalidTreeError("circle pieces have overlapping supports")
        if _geometry is not None:
            self.cells, self.coords = _geometry
            self.has_d2 = True
            return
        B = self.chart
        ends = np.array([[s.alpha - 1.0, s.alpha] for s in self.pieces]).ravel()
        try:
            xs = pr.to_float(B.inverse(ends)).reshape(-1, 2)
        except DomainError as exc:
            raise DomainError("a support escapes the component") from exc
        self.cells = [(float(lo), float(hi)) for lo, hi in xs]
        self.coords = _cell_coordinates(B, self.cells, floor=max(1e-10, B.tol))
        self.has_d2 = True

    @property
    def chart(self):
        return chart_for(self.f, "right", self.p, self.component, tol=self.tol)

    @property
    def support(self):
        return min(c[0] for c in self.cells), max(c[1] for c in self.cells)

    def _first(self, x):
        xf = pr.to_float(x)
        y = xf.copy()
        d = np.ones_like(xf)
        for (lo, hi), s, coord in zip(self.cells, self.pieces, self.coords):
            m = (xf > lo) & (xf < hi)
            if not np.any(m):
                continue
            b, db = coord.jet(xf[m])
            v, dv = s.jet(b, 1)
            yi, dy = coord.inverse_jet(v)
            y[m] = yi
            d[m] = db * dv * dy
        if pr.is_extended(x):
            return pr.lift_like(y, x), pr.lift_like(d, x)
        return y, d

    def _jet(self, x, order):
        y, d = self._first(x)
        out = [y, d][: order + 1]
        if order >= 2:
            xf = pr.to_float(x)
            d2 = np.zeros_like(xf)
            for lo, hi in self.cells:
                m = (xf > lo) & (xf < hi)
                if np.any(m):
                    h = np.full(int(m.sum()), 1e-3 * (hi - lo))
                    d2[m] = richardson_d2(lambda z: self._first(z)[1], xf[m], h)
            out.append(pr.lift_like(d2, x) if pr.is_extended(x) else d2)
        return out

    def inverse(self):
        return self.memo(("inverse",), lambda: ChartConjugate(
            self.f, [s.inverse() for s in self.pieces], self.p, self.component, self.tol,
            _geometry=(self.cells, self.coords)))

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inverse().jet(y, order)

    def children(self):
        return (self.f,)

    def to_dict(self):
        d = {"type": "chart_conjugate", "map": self.f.to_dict(), "pieces": [s.to_dict() for s in self.pieces],
             "component": list(self.component), "tol": self.tol}
        if self.p is not None:
            d["p"] = self.p
        return d


@register("chart_conjugate", {"map", "pieces", "p", "component", "tol"})
def _load_conj(s):
    pieces = [lift_from_dict(v, f"{s.path}.pieces[{i}]") for i, v in enumerate(s.req("pieces"))]
    for i, v in enumerate(pieces):
        if not isinstance(v, SupportedCircleDiffeo):
            raise InvalidTreeError(f"{s.path}.pieces[{i}] must be a supported circle map")
    return ChartConjugate(s.tree("map"), pieces, s.get("p"), s.get("component"), s.num("tol", 1e-8))


def mather_surgery(f: DiffeoExpr, phi: SupportedCircleDiffeo, p: float | None = None, tol: float = 1e-8) -> DiffeoExpr:
    """g = f o h with h = B^-1 phi B supported in [f^-1(q), q], B(q) = alpha."""
    return multi_surgery(f, [phi], p, tol)


def multi_surgery(f: DiffeoExpr, phis, p: float | None = None, tol: float = 1e-8) -> DiffeoExpr:
    """g = f o h_l o ... o h_1 for supports alpha_{i+1} < alpha_i - 1, alpha_1 <= 0."""
    phis = list(phis)
    if not phis:
        return f
    alphas = [s.alpha for s in phis]
    if alphas[0] > 0:
        raise DomainError("the first support must satisfy alpha <= 0")
    for a0, a1 in zip(alphas, alphas[1:]):
        if not a1 < a0 - 1:
            raise InvalidTreeError("supports must satisfy alpha_{i+1} < alpha_i - 1")
    return Compose([f, ChartConjugate(f, phis, p, tol=tol)])


# -- fragmentation ----------------------------------------------------------

@dataclass
class FragmentResult:
    """``phi = T_rotation o pieces[0] o ... o pieces[-1]``."""

    pieces: list
    rotation: float
    steps: int
    sizes: list = field(default_factory=list)

    def compose(self) -> CircleLift:
        parts = [s.lift for s in self.pieces]
        if self.rotation:
            parts = [Translation(self.rotation)] + parts
        return ComposedLift(parts) if parts else Translation(0.0)


def _split_step(g: CircleLift):
    """g = v o u with u the identity near 0 and v the identity near 1/2."""
    u = DampedLift(g, 0.0)
    v = ComposedLift([g, InverseLift(u)])
    return SupportedCircleDiffeo(v, -0.5), SupportedCircleDiffeo(u, 0.0)


def fragment(phi: CircleLift, eps_target: float, max_steps: int = 4096, tol: float = 1e-12) -> FragmentResult:
    """Write phi as a rotation followed by C^1-small pieces, each the identity
    on an interval of length 3/8.

    The linear isotopy id + s(phi - id) is cut into l steps, each step split
    into a piece fixing a neighbourhood of 0 and one fixing a neighbourhood of
    1/2.  l grows until every piece has C^1 size at most ``eps_target``.
    """
    if not eps_target > 0:
        raise ValueError("eps_target must be positive")
    c = float(phi(0.0))
    base = ComposedLift([Translation(-c), phi]) if abs(c) > tol else phi
    size = base.size()
    if size <= tol:
        return FragmentResult([], c, 0, [])
    steps = max(1, math.ceil(size / eps_target))
    while steps <= max_steps:
        psi = [IsotopyLift(base, i / steps) for i in range(steps + 1)]
        pieces, sizes, ok = [], [], True
        # phi = g_l o ... o g_1 with g_i = psi_{i/l} o psi_{(i-1)/l}^-1
        for i in range(steps, 0, -1):
            g = ComposedLift([psi[i], InverseLift(psi[i - 1])]) if i > 1 else psi[1]
            try:
                v, u = _split_step(g)
            except InvalidTreeError:
                ok = False
                break
            for piece in (v, u):
                sz = piece.size()
                sizes.append(sz)
                pieces.append(piece)
        if ok and max(sizes) <= eps_target:
            return FragmentResult(pieces, c, steps, sizes)
        worst = max(sizes) if sizes else 2 * eps_target
        steps = max(steps + 1, math.ceil(steps * worst / eps_target * 1.05))
    raise InvalidTreeError("fragmentation did not reach the target size")


def place_supports(pieces, beta: float = 0.0, gap: float = 1e-6):
    """Move each piece's support by integers so that alpha_1 <= beta and
    alpha_{i+1} < alpha_i - 1."""
    out = []
    bound = beta + 1.0 + gap  # alpha must be <= bound - 1 - gap
    for s in pieces:
        limit = bound - 1.0 - gap
        k = math.floor(limit - s.alpha)
        out.append(s.shifted(s.alpha + k))
        bound = s.alpha + k
    return out


@dataclass
class TrivializeReport:
    beta: float
    q: float
    variation_left: float
    fragments: FragmentResult
    placed: list


def select_beta(f: DiffeoExpr, B, a: float, delta: float, beta_floor: float = -200.0):
    """Largest integer beta <= 0 with V(f; [a, q]) < delta/2 where B(q) = beta.

    All candidate q are computed in one batched chart inversion; the
    variation up to each q comes from one cumulative sum on a fine grid.
    """
    betas = -np.arange(0, int(-beta_floor) + 1, dtype=float)
    qs = pr.to_float(B.inverse(betas))
    w = qs[0] - a
    x = np.union1d(np.linspace(a, qs[0], 8193), a + np.geomspace(1e-9 * w, w, 2048))
    x = np.union1d(x, qs)
    ld = np.log(pr.to_float(f.jet(x, 1)[1]))
    cum = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(ld)))])
    vals = cum[np.searchsorted(x, qs)]
    ok = np.nonzero(vals < delta / 2)[0]
    i = int(ok[0]) if ok.size else len(betas) - 1
    return float(betas[i]), float(qs[i]), float(vals[i])


def trivialize_mather(f: DiffeoExpr, p: float | None = None, eps_target: float = 0.05, delta: float | None = None,
                      grid: int = 256, tol: float = 1e-8, report: bool = False, beta_floor: float = -200.0):
    """Compose f with surgeries whose combined circle map is a rotation times
    the inverse Mather invariant, so that the result has trivial invariant."""
    from .mather import mather

    M = mather(f, p, p, grid=grid, tol=tol)
    Minv = InverseLift(M.lift)
    c = float(Minv(0.0))
    target = ComposedLift([Translation(-c), Minv])
    frag = fragment(target, eps_target)
    if not frag.pieces:
        return (f, TrivializeReport(0.0, float("nan"), 0.0, frag, [])) if report else f
    delta = eps_target if delta is None else delta
    B = chart_for(f, "right", p, M.component, tol=tol)
    beta, q, v = select_beta(f, B, M.component[0], delta, beta_floor)
    placed = place_supports(frag.pieces, beta)
    g = multi_surgery(f, placed, p, tol)
    if report:
        return g, TrivializeReport(beta, q, v, frag, placed)
    return g


# -- conjugacy to powers ------------------------------------------------------

class ChartScale(DiffeoExpr):
    """``x -> A^-1(k A(x))`` on a component (fixing its endpoints)."""

    kind = "chart_scale"

    def __init__(self, f: DiffeoExpr, k: float, side: str = "left", p: float | None = None, component=None,
                 tol: float = 1e-8):
        super().__init__()
        if not k > 0:
            raise InvalidTreeError("scale factor must be positive")
        self.f, self.k, self.side, self.p, self.tol = f, float(k), side, p, tol
        self.component = tuple(component) if component is not None else component_of(f, 0.5 if p is None else p)
        self.has_d2 = True

    @property
    def chart(self):
        return chart_for(self.f, self.side, self.p, self.component, tol=self.tol)

    def _first(self, x):
        y = x.copy()
        d = x * 0 + 1
        A = self.chart
        xf = pr.to_float(x)
        inside = (xf > A.a) & (xf < A.b)
        if np.any(inside):
            a, da = A.jet(x[inside])
            yi, dy = A.inverse_jet(self.k * a)
            y[inside] = as_array(yi)
            d[inside] = self.k * da * dy
        return y, d

    def _jet(self, x, order):
        y, d = self._first(x)
        out = [y, d][: order + 1]
        if order >= 2:
            xf = pr.to_float(x)
            A = self.chart
            room = np.minimum(xf - A.a, A.b - xf)
            h = np.minimum(np.maximum(1e-4 * room, 1e-7), 0.25 * room)
            d2 = np.zeros_like(xf)
            ok = h > 4 * A.guard
            if np.any(ok):
                d2[ok] = richardson_d2(lambda z: self._first(z)[1], xf[ok], h[ok])
            out.append(pr.lift_like(d2, x) if pr.is_extended(x) else d2)
        return out

    def inverse(self):
        return ChartScale(self.f, 1.0 / self.k, self.side, self.p, self.component, self.tol)

    def inverse_jet(self, y, order=1, bracket=None):
        return self.inverse().jet(y, order)

    def children(self):
        return (self.f,)

    def to_dict(self):
        d = {"type": "chart_scale", "map": self.f.to_dict(), "k": self.k, "side": self.side,
             "component": list(self.component), "tol": self.tol}
        if self.p is not None:
            d["p"] = self.p
        return d


@register("chart_scale", {"map", "k", "side", "p", "component", "tol"})
def _load_scale(s):
    return ChartScale(s.tree("map"), s.num("k"), s.get("side", "left"), s.get("p"), s.get("component"),
                      s.num("tol", 1e-8))


def conjugacy_from_flows(f: DiffeoExpr, k: int, p: float | None = None, side: str = "left",
                         flow_tol: float = 1e-6, check: bool = True, tol: float = 1e-8) -> ChartScale:
    """h = A^-1(k A) with h f h^-1 = f^k; refused unless f is flowable."""
    if check:
        from .flow import root_defect

        component = component_of(f, 0.5 if p is None else p)
        for j in (2, 3):
            d = root_defect(f, j, grid=65, p=p, component=component, tol=tol)
            if d > flow_tol:
                raise InvalidTreeError(f"map is not flowable: root defect {d:.3g} for k={j}")
    return ChartScale(f, k, side, p, tol=tol)


def conjugacy_residual(f: DiffeoExpr, h: DiffeoExpr, k: int, grid=257, lo: float = 0.05, hi: float = 0.95) -> float:
    """sup |h f h^-1 - f^k| on a grid of [lo, hi]."""
    from .ops import grid_points, iterate

    x = grid_points(grid, lo, hi)
    lhs = h(f(h.inverse()(x)))
    rhs = iterate(f, k, x)
    return float(np.max(np.abs(pr.to_float(lhs - rhs))))


# -- insertion near 0 ----------------------------------------------------------

def insert_scaled(f: DiffeoExpr, delta: float, h_small: DiffeoExpr, tol: float = 1e-6) -> DiffeoExpr:
    """h_small on [0, delta] glued to the affine copy of f on [delta, 1]."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    big = HomothetyConj(f, 1.0 - delta, 1.0)
    at = np.array([delta])
    d_small = float(pr.to_float(h_small.jet(at, 1)[1])[0])
    d_big = float(pr.to_float(big.jet(at, 1)[1])[0])
    v_small = float(pr.to_float(h_small.jet(at, 0)[0])[0])
    if abs(v_small - delta) > 1e-9:
        raise InvalidTreeError("the inserted map must fix delta")
    if abs(d_small - d_big) > tol:
        raise InvalidTreeError(f"derivative mismatch {abs(d_small - d_big):.3g} at the gluing point")
    return PiecewiseGlue([0.0, delta, 1.0], [h_small, big])
