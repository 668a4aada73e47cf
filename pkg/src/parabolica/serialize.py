"""JSON format for expression trees.

Each node is an object with a ``"type"`` discriminator.  Loaders are strict:
unknown keys fail with their JSON path.  Modules defining further node kinds
register a loader with :func:`register`.
"""
from __future__ import annotations

import json
from typing import Callable

from .bumps import BumpFn
from .construct import BernsteinPoly
from .diffeo import (
    Blend,
    Compose,
    DiffeoExpr,
    FlowTime,
    GermQ,
    HatGermQ1,
    HomothetyConj,
    Identity,
    IntPower,
    Inverse,
    PiecewiseGlue,
    PolyMap,
)
from .errors import InvalidTreeError, UnknownKeyError
from .fields import field_from_dict

__all__ = ["register", "tree_from_dict", "tree_to_dict", "loads", "dumps", "load_file", "Fields"]

_LOADERS: dict[str, tuple[set, Callable]] = {}


def register(kind: str, keys: set):
    """Decorator registering ``loader(spec, path)`` for node type ``kind``."""

    def deco(fn):
        _LOADERS[kind] = (set(keys) | {"type"}, fn)
        return fn

    return deco


class Fields:
    """Typed access to a node object with path-aware errors."""

    def __init__(self, spec: dict, path: str):
        self.spec, self.path = spec, path

    def req(self, key):
        if key not in self.spec:
            raise InvalidTreeError(f"missing key {key!r} at {self.path}")
        return self.spec[key]

    def get(self, key, default=None):
        return self.spec.get(key, default)

    def num(self, key, default=None):
        v = self.spec.get(key, default) if default is not None else self.req(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InvalidTreeError(f"{self.path}.{key} must be a number")
        return float(v)

    def int(self, key, default=None):
        v = self.spec.get(key, default) if default is not None else self.req(key)
        if isinstance(v, bool) or not isinstance(v, int):
            raise InvalidTreeError(f"{self.path}.{key} must be an integer")
        return v

    def tree(self, key):
        return tree_from_dict(self.req(key), f"{self.path}.{key}")

    def trees(self, key):
        items = self.req(key)
        if not isinstance(items, list):
            raise InvalidTreeError(f"{self.path}.{key} must be a list")
        return [tree_from_dict(v, f"{self.path}.{key}[{i}]") for i, v in enumerate(items)]


def tree_from_dict(spec, path: str = "$") -> DiffeoExpr:
    if not isinstance(spec, dict):
        raise InvalidTreeError(f"expected an object at {path}")
    kind = spec.get("type")
    _ensure_registered()
    if kind not in _LOADERS:
        raise InvalidTreeError(f"unknown node type {kind!r} at {path}")
    keys, loader = _LOADERS[kind]
    extra = set(spec) - keys
    if extra:
        raise UnknownKeyError(f"unknown key(s) {sorted(extra)} at {path}")
    try:
        return loader(Fields(spec, path))
    except InvalidTreeError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise InvalidTreeError(f"bad node at {path}: {exc}") from exc


def tree_to_dict(f: DiffeoExpr) -> dict:
    return f.to_dict()


def dumps(f: DiffeoExpr, **kw) -> str:
    return json.dumps(f.to_dict(), sort_keys=True, **kw)


def loads(text: str) -> DiffeoExpr:
    return tree_from_dict(json.loads(text))


def load_file(path) -> DiffeoExpr:
    with open(path) as fh:
        return tree_from_dict(json.load(fh))


def bump_from_dict(spec, path):
    if not isinstance(spec, dict) or spec.get("type", "bump") != "bump":
        raise InvalidTreeError(f"expected a bump at {path}")
    extra = set(spec) - {"type", "center", "eps", "order"}
    if extra:
        raise UnknownKeyError(f"unknown key(s) {sorted(extra)} at {path}")
    return BumpFn(float(spec["center"]), float(spec["eps"]), int(spec.get("order", 2)))


@register("identity", set())
def _identity(s):
    return Identity()


@register("germ_q", {"family", "lam", "anchor", "direction"})
def _germ(s):
    return GermQ(s.int("family"), s.num("lam"), s.num("anchor", 0.0), s.get("direction", "forward"))


@register("hat_germ_q1", {"lam", "anchor"})
def _hat(s):
    return HatGermQ1(s.num("lam"), s.num("anchor", 0.0))


@register("poly_map", {"coeffs"})
def _poly(s):
    return PolyMap(s.req("coeffs"))


@register("flow_time", {"field", "t", "method"})
def _flow(s):
    return FlowTime(field_from_dict(s.req("field"), f"{s.path}.field"), s.num("t"), s.get("method", "exact"))


@register("compose", {"parts"})
def _compose(s):
    return Compose(s.trees("parts"))


@register("inverse", {"inner"})
def _inverse(s):
    return Inverse(s.tree("inner"))


@register("int_power", {"inner", "n"})
def _power(s):
    return IntPower(s.tree("inner"), s.int("n"))


@register("blend", {"f", "g", "bump"})
def _blend(s):
    return Blend(s.tree("f"), s.tree("g"), bump_from_dict(s.req("bump"), f"{s.path}.bump"))


@register("homothety_conj", {"inner", "scale", "anchor"})
def _homothety(s):
    return HomothetyConj(s.tree("inner"), s.num("scale"), s.num("anchor", 0.0))


@register("piecewise_glue", {"breakpoints", "pieces"})
def _glue(s):
    return PiecewiseGlue(s.req("breakpoints"), s.trees("pieces"))


@register("bernstein_poly", {"coeffs", "lo", "hi"})
def _bern(s):
    return BernsteinPoly(s.req("coeffs"), s.num("lo"), s.num("hi"))


def _ensure_registered():
    # node kinds defined in higher-level modules register on import
    from . import amplifier, flow, surgery  # noqa: F401
