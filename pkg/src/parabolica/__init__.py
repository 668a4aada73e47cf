"""Parabolic diffeomorphisms of [0, 1]: expression trees, Fatou charts and
flows, Mather invariants, asymptotic variation, and the surgeries that move
between them."""

from .chart import FatouChart, chart_for, component_of
from .circle import BumpShift, SupportedCircleDiffeo, Translation
from .construct import bernstein_smooth, blend, choose_germ, germ_replace
from .diffeo import (Blend, Compose, DiffeoExpr, FlowTime, GermQ, HatGermQ1, HomothetyConj, Identity, IntPower,
                     Inverse, PiecewiseGlue, PolyMap, compose)
from .errors import (ConfigError, ConvergenceError, DomainError, InvalidTreeError, ParabolicaError,
                     SecondDerivativeUnavailable, UnknownKeyError)
from .flow import flow_time, kth_root, root_defect
from .mather import aligned_distance, mather, translation_commutation_defect, triviality_defect
from .ops import c1_distance, cl_distance, deriv, evaluate, fixed_points, iterate, log_deriv_cocycle
from .precision import Precision
from .serialize import dumps, loads, tree_from_dict
from .surgery import (conjugacy_from_flows, conjugacy_residual, fragment, insert_scaled, mather_surgery,
                      multi_surgery, trivialize_mather)
from .variation import asymptotic_variation, localize, variation, variation_series

__version__ = "0.1.0"
