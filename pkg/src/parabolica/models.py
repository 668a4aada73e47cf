"""Ready-made maps used by the experiments, tests and CLI."""
from __future__ import annotations

from .circle import BumpShift, SupportedCircleDiffeo
import numpy as np

from .diffeo import DiffeoExpr, FlowTime, HomothetyConj, PiecewiseGlue, PolyMap
from .fields import model_field
from .surgery import mather_surgery

__all__ = ["flowable_model", "polynomial_model", "bump_piece", "surgered_model", "glued_model", "two_component_model"]


def flowable_model(c: float = 0.5, t: float = 1.0) -> DiffeoExpr:
    """Time-t map of c x^2 (1-x)^2 d/dx."""
    return FlowTime(model_field(c), t)


def polynomial_model(a: float = 0.5, b: float = 0.3) -> DiffeoExpr:
    """x + x^2 (1-x)^2 (a + b x): cheap to evaluate, generically not a time-one map."""
    base = np.polynomial.polynomial.polymul([0, 0, 1, -2, 1], [a, b])
    coeffs = np.zeros(len(base))
    coeffs[1] = 1.0
    coeffs += base
    return PolyMap(coeffs.tolist())


def bump_piece(amp: float, alpha: float = 0.0, power: int = 4) -> SupportedCircleDiffeo:
    return SupportedCircleDiffeo(BumpShift(amp, alpha, power), alpha)


def surgered_model(c: float = 0.5, amp: float = 0.05, alpha: float = 0.0, power: int = 4,
                   p: float | None = None) -> DiffeoExpr:
    """Flowable model with one Mather surgery by t + amp sin^power(pi (t - alpha))."""
    return mather_surgery(flowable_model(c), bump_piece(amp, alpha, power), p)


def glued_model(left: DiffeoExpr, right: DiffeoExpr, split: float = 0.5) -> DiffeoExpr:
    """``left`` rescaled onto [0, split] and ``right`` onto [split, 1]."""
    return PiecewiseGlue([0.0, split, 1.0], [HomothetyConj(left, split, 0.0), HomothetyConj(right, 1.0 - split, 1.0)])


def two_component_model(amp_left: float = 0.05, amp_right: float = 0.1, c: float = 0.5) -> DiffeoExpr:
    """Glued map with a surgered component on each side of 1/2."""
    return glued_model(surgered_model(c, amp_left), surgered_model(c, amp_right))
