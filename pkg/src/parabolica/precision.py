"""Working-precision modes.

Kernels operate on numpy arrays.  In the default binary64 mode these are
``float64`` arrays; in extended mode they are object arrays of ``mpmath.mpf``
and the elementwise functions below dispatch to mpmath.  Nodes backed by
scipy interpolants silently fall back to binary64.
"""
from __future__ import annotations

import contextlib
import re
from dataclasses import dataclass

import mpmath
import numpy as np

__all__ = [
    "Precision",
    "F64",
    "is_extended",
    "sqrt",
    "cbrt",
    "log",
    "log1p",
    "exp",
    "isfinite",
    "to_float",
]


@dataclass(frozen=True)
class Precision:
    """Mantissa width of the working real type (53 means binary64)."""

    bits: int = 53

    def __post_init__(self):
        if self.bits < 53:
            raise ValueError("precision below binary64 is not supported")

    @classmethod
    def parse(cls, text: "str | Precision | None") -> "Precision":
        if text is None:
            return F64
        if isinstance(text, Precision):
            return text
        text = str(text).strip().lower()
        if text in ("f64", "binary64", "double"):
            return F64
        m = re.fullmatch(r"bits:(\d+)", text)
        if not m:
            raise ValueError(f"unrecognised precision mode {text!r}; use 'f64' or 'bits:N'")
        return cls(int(m.group(1)))

    @property
    def extended(self) -> bool:
        return self.bits > 53

    @property
    def eps(self) -> float:
        return 2.0 ** (1 - self.bits)

    @property
    def label(self) -> str:
        return "f64" if not self.extended else f"bits:{self.bits}"

    def asarray(self, x) -> np.ndarray:
        if not self.extended:
            return np.asarray(x, dtype=float)
        with self.context():
            flat = [v if isinstance(v, mpmath.mpf) else mpmath.mpf(v) for v in np.ravel(x)]
        out = np.empty(len(flat), dtype=object)
        out[:] = flat
        return out.reshape(np.shape(x))

    @contextlib.contextmanager
    def context(self):
        if self.extended:
            with mpmath.workprec(self.bits):
                yield
        else:
            yield


F64 = Precision()


def is_extended(x) -> bool:
    return isinstance(x, np.ndarray) and x.dtype == object


def _mp(name):
    return np.frompyfunc(getattr(mpmath, name), 1, 1)


_MP = {name: _mp(name) for name in ("sqrt", "log", "log1p", "exp", "isfinite")}


def sqrt(x):
    return _MP["sqrt"](x) if is_extended(x) else np.sqrt(x)


def cbrt(x):
    if is_extended(x):
        ax = np.abs(x)
        r = np.frompyfunc(lambda v: mpmath.root(v, 3), 1, 1)(ax)
        return np.where(x < 0, -r, r)
    return np.cbrt(x)


def log(x):
    return _MP["log"](x) if is_extended(x) else np.log(x)


def log1p(x):
    return _MP["log1p"](x) if is_extended(x) else np.log1p(x)


def exp(x):
    return _MP["exp"](x) if is_extended(x) else np.exp(x)


def isfinite(x):
    if is_extended(x):
        return _MP["isfinite"](x).astype(bool)
    return np.isfinite(x)


def to_float(x) -> np.ndarray:
    if is_extended(x):
        return np.array([float(v) for v in np.ravel(x)]).reshape(np.shape(x))
    return np.asarray(x, dtype=float)


def eps_of(x) -> float:
    """Unit roundoff of the working type of ``x``."""
    if is_extended(x):
        return 2.0 ** (1 - mpmath.mp.prec)
    return float(np.finfo(float).eps)


def lift_like(values, like):
    """Convert a binary64 array to the working type of ``like``."""
    if not is_extended(like):
        return np.asarray(values, dtype=float)
    out = np.empty(np.shape(values), dtype=object)
    out.ravel()[:] = [mpmath.mpf(float(v)) for v in np.ravel(values)]
    return out
