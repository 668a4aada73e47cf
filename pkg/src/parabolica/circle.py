"""Lifts of circle diffeomorphisms: increasing maps of the line commuting with
the unit translation.  All lifts evaluate ``[phi(t), Dphi(t)]`` on arrays."""
from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InvalidTreeError, UnknownKeyError
from .roots import solve_increasing

__all__ = [
    "CircleLift",
    "Translation",
    "BumpShift",
    "SampledLift",
    "ComposedLift",
    "InverseLift",
    "IsotopyLift",
    "DampedLift",
    "SupportedCircleDiffeo",
    "lift_from_dict",
    "periodic_window",
]


class CircleLift:
    kind = "abstract"

    def jet(self, t, order=1):
        raise NotImplementedError

    def __call__(self, t):
        out = self.jet(np.asarray(t, dtype=float), 0)[0]
        return out if np.ndim(out) else out[()]

    def deriv(self, t):
        out = self.jet(np.asarray(t, dtype=float), 1)[1]
        return out if np.ndim(out) else out[()]

    def inverse(self) -> "CircleLift":
        return InverseLift(self)

    def displacement_bound(self, n=4096) -> float:
        t = np.linspace(0.0, 1.0, n, endpoint=False)
        return float(np.max(np.abs(self(t) - t)))

    def c1_size(self, n=4096):
        """(sup|phi - id|, sup|Dphi - 1|) over one period."""
        t = np.linspace(0.0, 1.0, n, endpoint=False)
        v, d = self.jet(t, 1)
        return float(np.max(np.abs(v - t))), float(np.max(np.abs(d - 1)))

    def size(self, n=4096) -> float:
        return max(self.c1_size(n))

    def seam_error(self, n=257) -> float:
        t = np.linspace(0.0, 1.0, n)
        return float(np.max(np.abs(self(t + 1) - self(t) - 1)))

    def __matmul__(self, other):
        return ComposedLift([self, other])

    def to_dict(self) -> dict:
        raise NotImplementedError


class Translation(CircleLift):
    kind = "translation"

    def __init__(self, c: float):
        self.c = float(c)

    def jet(self, t, order=1):
        t = np.asarray(t, dtype=float)
        return [t + self.c, np.ones_like(t)][: order + 1]

    def inverse(self):
        return Translation(-self.c)

    def to_dict(self):
        return {"type": "translation", "c": self.c}


class BumpShift(CircleLift):
    """``t + amp * sin(pi (t - alpha))**power``: fixes alpha + Z, moves the rest."""

    kind = "bump_shift"

    def __init__(self, amp: float, alpha: float = 0.0, power: int = 4):
        if power < 2 or power % 2:
            raise InvalidTreeError("bump power must be an even integer >= 2")
        self.amp, self.alpha, self.power = float(amp), float(alpha), int(power)
        # sup |d/ds sin^k(pi s)| = pi k sin^{k-1} cos at tan^2 = k - 1
        k = self.power
        s2 = (k - 1) / k
        self.slope_max = math.pi * k * s2 ** ((k - 1) / 2) * math.sqrt(1 - s2)
        if abs(self.amp) * self.slope_max >= 1:
            raise InvalidTreeError("bump amplitude too large: lift would not be increasing")

    def jet(self, t, order=1):
        t = np.asarray(t, dtype=float)
        s = np.pi * (t - self.alpha)
        sn = np.sin(s)
        out = [t + self.amp * sn**self.power]
        if order >= 1:
            out.append(1 + self.amp * np.pi * self.power * sn ** (self.power - 1) * np.cos(s))
        return out

    def to_dict(self):
        return {"type": "bump_shift", "amp": self.amp, "alpha": self.alpha, "power": self.power}


class SampledLift(CircleLift):
    """Monotone cubic interpolation of samples ``M(t_i)`` over one period."""

    kind = "sampled"

    def __init__(self, t, values):
        t = np.asarray(t, dtype=float)
        v = np.asarray(values, dtype=float)
        if t.ndim != 1 or len(t) < 2 or np.any(np.diff(t) <= 0) or t[-1] - t[0] >= 1:
            raise InvalidTreeError("sample grid must increase within one period")
        if np.any(np.diff(v) <= 0) or v[-1] >= v[0] + 1:
            raise InvalidTreeError("samples must be strictly increasing (circle lift)")
        self.t, self.values = t, v
        # three periods of nodes so that the seam is interior
        tt = np.concatenate([t - 1, t, t + 1, [t[0] + 2]])
        vv = np.concatenate([v - 1, v, v + 1, [v[0] + 2]])
        self._p = PchipInterpolator(tt, vv)
        self._dp = self._p.derivative()

    def jet(self, t, order=1):
        t = np.asarray(t, dtype=float)
        k = np.floor(t - self.t[0])
        r = t - k
        out = [self._p(r) + k]
        if order >= 1:
            out.append(self._dp(r))
        return out

    def to_dict(self):
        return {"type": "sampled", "t": self.t.tolist(), "values": self.values.tolist()}


class ComposedLift(CircleLift):
    """``ComposedLift([a, b])`` is a o b."""

    kind = "compose"

    def __init__(self, parts):
        flat = []
        for p in parts:
            flat.extend(p.parts if isinstance(p, ComposedLift) else [p])
        self.parts = flat

    def jet(self, t, order=1):
        v = np.asarray(t, dtype=float)
        d = np.ones_like(v)
        for p in reversed(self.parts):
            j = p.jet(v, order)
            v = j[0]
            if order >= 1:
                d = d * j[1]
        return [v, d][: order + 1]

    def inverse(self):
        return ComposedLift([p.inverse() for p in reversed(self.parts)])

    def to_dict(self):
        return {"type": "compose", "parts": [p.to_dict() for p in self.parts]}


class InverseLift(CircleLift):
    kind = "inverse"

    def __init__(self, inner: CircleLift):
        self.inner = inner
        # sampled sup underestimates the true one; the bracket only needs to contain the root
        self._bound = 1.05 * inner.displacement_bound() + 1e-3

    def jet(self, t, order=1):
        t = np.asarray(t, dtype=float)
        lo = t - self._bound
        hi = t + self._bound

        def fun(s, idx):
            v, d = self.inner.jet(s, 1)
            return v, d

        s = solve_increasing(fun, t, lo, hi, x0=t)
        out = [s]
        if order >= 1:
            out.append(1.0 / self.inner.jet(s, 1)[1])
        return out

    def inverse(self):
        return self.inner

    def to_dict(self):
        return {"type": "inverse", "inner": self.inner.to_dict()}


class IsotopyLift(CircleLift):
    """``id + s (phi - id)``; increasing for s in [0, 1] whenever phi is."""

    kind = "isotopy"

    def __init__(self, inner: CircleLift, s: float):
        self.inner, self.s = inner, float(s)

    def jet(self, t, order=1):
        t = np.asarray(t, dtype=float)
        j = self.inner.jet(t, order)
        out = [t + self.s * (j[0] - t)]
        if order >= 1:
            out.append(1 + self.s * (j[1] - 1))
        return out

    def to_dict(self):
        return {"type": "isotopy", "inner": self.inner.to_dict(), "s": self.s}


def periodic_window(t, lo=3.0 / 16, hi=5.0 / 16, order=1):
    """Period-1 function: 0 on [-lo, lo], 1 on [hi, 1/2 + (1/2 - hi)], smooth (C^2) ramps."""
    from .bumps import transition_profile

    t = np.asarray(t, dtype=float)
    r = t - np.floor(t)
    dist = np.minimum(r, 1 - r)  # distance to the integers, in [0, 1/2]
    w = hi - lo
    u = np.clip((dist - lo) / w, 0.0, 1.0)
    prof = transition_profile(2)
    val = np.clip(prof(u), 0.0, 1.0)
    if order == 0:
        return [val]
    sgn = np.where(r <= 0.5, 1.0, -1.0)
    return [val, prof(u, 1) * sgn / w]


class DampedLift(CircleLift):
    """``id + chi (g - id)`` with a periodic window chi vanishing near ``shift + Z``."""

    kind = "damped"

    def __init__(self, inner: CircleLift, shift: float = 0.0):
        self.inner, self.shift = inner, float(shift)

    def jet(self, t, order=1):
        t = np.asarray(t, dtype=float)
        j = self.inner.jet(t, order)
        chi = periodic_window(t - self.shift, order=order)
        out = [t + chi[0] * (j[0] - t)]
        if order >= 1:
            out.append(1 + chi[0] * (j[1] - 1) + chi[1] * (j[0] - t))
        return out

    def identity_interval(self):
        """An interval (mod 1) on which the damped lift is the identity."""
        return (self.shift - 3.0 / 16, self.shift + 3.0 / 16)

    def to_dict(self):
        return {"type": "damped", "inner": self.inner.to_dict(), "shift": self.shift}


class SupportedCircleDiffeo:
    """A diffeomorphism of the line equal to ``lift`` on [alpha - 1, alpha] and
    the identity elsewhere; ``lift`` must fix alpha (hence alpha + Z)."""

    def __init__(self, lift: CircleLift, alpha: float, tol: float = 1e-9):
        self.lift = lift
        self.alpha = float(alpha)
        if abs(float(lift(self.alpha)) - self.alpha) > tol:
            raise InvalidTreeError("lift must fix the support endpoint alpha")
        t = np.linspace(self.alpha - 1, self.alpha, 2049)
        if np.any(lift.deriv(t) <= 0):
            raise InvalidTreeError("lift is not increasing on its support")

    @property
    def support(self):
        return self.alpha - 1.0, self.alpha

    def jet(self, t, order=1):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.alpha - 1) & (t <= self.alpha)
        v = t.copy()
        d = np.ones_like(t)
        if np.any(inside):
            j = self.lift.jet(t[inside], order)
            v[inside] = j[0]
            if order >= 1:
                d[inside] = j[1]
        return [v, d][: order + 1]

    def __call__(self, t):
        out = self.jet(np.asarray(t, dtype=float), 0)[0]
        return out if np.ndim(out) else out[()]

    def inverse(self) -> "SupportedCircleDiffeo":
        return SupportedCircleDiffeo(self.lift.inverse(), self.alpha)

    def c1_size(self):
        return self.lift.c1_size()

    def size(self):
        return self.lift.size()

    def shifted(self, alpha: float) -> "SupportedCircleDiffeo":
        """Same circle map, support moved to (alpha - 1, alpha) with alpha = self.alpha + integer."""
        k = alpha - self.alpha
        if abs(k - round(k)) > 1e-12:
            raise InvalidTreeError("supports can only move by integers")
        return SupportedCircleDiffeo(self.lift, alpha)

    def to_dict(self):
        return {"type": "supported", "lift": self.lift.to_dict(), "alpha": self.alpha}


def lift_from_dict(spec, path="$"):
    if not isinstance(spec, dict):
        raise InvalidTreeError(f"expected an object at {path}")
    kind = spec.get("type")
    allowed = {
        "translation": {"c"},
        "bump_shift": {"amp", "alpha", "power"},
        "sampled": {"t", "values"},
        "compose": {"parts"},
        "inverse": {"inner"},
        "isotopy": {"inner", "s"},
        "damped": {"inner", "shift"},
        "supported": {"lift", "alpha"},
    }
    if kind not in allowed:
        raise InvalidTreeError(f"unknown circle map type {kind!r} at {path}")
    extra = set(spec) - allowed[kind] - {"type"}
    if extra:
        raise UnknownKeyError(f"unknown key(s) {sorted(extra)} at {path}")
    if kind == "translation":
        return Translation(spec["c"])
    if kind == "bump_shift":
        return BumpShift(spec["amp"], spec.get("alpha", 0.0), spec.get("power", 4))
    if kind == "sampled":
        return SampledLift(spec["t"], spec["values"])
    if kind == "compose":
        return ComposedLift([lift_from_dict(p, f"{path}.parts[{i}]") for i, p in enumerate(spec["parts"])])
    if kind == "inverse":
        return InverseLift(lift_from_dict(spec["inner"], f"{path}.inner"))
    if kind == "isotopy":
        return IsotopyLift(lift_from_dict(spec["inner"], f"{path}.inner"), spec["s"])
    if kind == "damped":
        return DampedLift(lift_from_dict(spec["inner"], f"{path}.inner"), spec.get("shift", 0.0))
    return SupportedCircleDiffeo(lift_from_dict(spec["lift"], f"{path}.lift"), spec["alpha"])
