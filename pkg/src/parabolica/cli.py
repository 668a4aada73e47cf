"""Config-driven command line front end.

Every command reads a strict JSON config, writes CSV/JSON artifacts into one
output directory and finishes with ``manifest.json``.  Exit codes: 0 success,
2 config error, 3 numerical non-convergence, 4 invalid tree or domain.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from . import precision as pr
from .chart import chart_for, component_of
from .circle import SupportedCircleDiffeo, ComposedLift, lift_from_dict
from .errors import ConfigError, ConvergenceError, DomainError, InvalidTreeError, ParabolicaError
from .experiments import EXPERIMENTS, StageError, csv_text, summary_csv
from .flow import flow_time, root_defect
from .mather import aligned_distance, mather, translation_commutation_defect, triviality_defect
from .ops import cl_distance, fixed_points
from .serialize import dumps, tree_from_dict
from .surgery import fragment, multi_surgery, trivialize_mather
from .variation import asymptotic_variation, variation, variation_series

COMMON = {"map", "output", "precision", "seed", "grid"}
_ABSENT = object()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _workers() -> int:
    raw = os.environ.get("PARABOLICA_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"PARABOLICA_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def _pmap(fn, items):
    items = list(items)
    if _workers() == 1 or len(items) < 2:
        return [fn(v) for v in items]
    with ThreadPoolExecutor(max_workers=min(_workers(), len(items))) as pool:
        return list(pool.map(fn, items))


class Config:
    """Strict view of a JSON object: every key must be consumed or declared."""

    def __init__(self, data, base: Path, path: str = "$"):
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must be a JSON object")
        self.data, self.base, self.path = data, base, path

    def check_keys(self, allowed):
        extra = sorted(set(self.data) - set(allowed))
        if extra:
            raise ConfigError(f"unrecognized key {self.path}.{extra[0]}")

    def _get(self, key, default):
        v = self.data.get(key, _ABSENT)
        if v is _ABSENT:
            if default is _ABSENT:
                raise ConfigError(f"missing required key {self.path}.{key}")
            return default
        return v

    def num(self, key, default=_ABSENT):
        v = self._get(key, default)
        if v is None or (isinstance(v, (int, float)) and not isinstance(v, bool)):
            return None if v is None else float(v)
        raise ConfigError(f"{self.path}.{key} must be a number")

    def int(self, key, default=_ABSENT):
        v = self._get(key, default)
        if v is None or (isinstance(v, int) and not isinstance(v, bool)):
            return v
        raise ConfigError(f"{self.path}.{key} must be an integer")

    def bool(self, key, default=_ABSENT):
        v = self._get(key, default)
        if not isinstance(v, bool):
            raise ConfigError(f"{self.path}.{key} must be true or false")
        return v

    def str(self, key, default=_ABSENT, choices=None):
        v = self._get(key, default)
        if v is None:
            return v
        if not isinstance(v, str) or (choices and v not in choices):
            raise ConfigError(f"{self.path}.{key} must be one of {sorted(choices)}" if choices
                              else f"{self.path}.{key} must be a string")
        return v

    def ints(self, key, default=_ABSENT):
        v = self._get(key, default)
        if not isinstance(v, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in v) or not v:
            raise ConfigError(f"{self.path}.{key} must be a nonempty list of integers")
        return [int(k) for k in v]

    def pair(self, key, default=_ABSENT):
        v = self._get(key, default)
        if not (isinstance(v, (list, tuple)) and len(v) == 2
                and all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v)):
            raise ConfigError(f"{self.path}.{key} must be a pair of numbers")
        return (float(v[0]), float(v[1]))

    def floats(self, key, default=_ABSENT):
        v = self._get(key, default)
        if not isinstance(v, list) or not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v):
            raise ConfigError(f"{self.path}.{key} must be a list of numbers")
        return [float(a) for a in v]

    def tree(self, key="map", required=True):
        v = self.data.get(key, _ABSENT)
        if v is _ABSENT or v is None:
            if required:
                raise ConfigError(f"missing required key {self.path}.{key}")
            return None
        where = f"{self.path}.{key}"
        if isinstance(v, str):
            file = (self.base / v).resolve()
            try:
                v = json.loads(file.read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read tree file {file} ({where}): {exc.strerror}")
            except json.JSONDecodeError as exc:
                raise ConfigError(f"tree file {file} is not valid JSON: {exc}")
            where = str(file)
        return tree_from_dict(v, where)

    def circle(self, key, default=_ABSENT):
        v = self._get(key, default)
        return lift_from_dict(v, f"{self.path}.{key}")

    def pieces(self, key="pieces"):
        v = self._get(key, _ABSENT)
        if not isinstance(v, list) or not v:
            raise ConfigError(f"{self.path}.{key} must be a nonempty list")
        out = []
        for i, s in enumerate(v):
            piece = lift_from_dict(s, f"{self.path}.{key}[{i}]")
            if not isinstance(piece, SupportedCircleDiffeo):
                raise ConfigError(f"{self.path}.{key}[{i}] must have type 'supported'")
            out.append(piece)
        return out


class Run:
    """Output directory plus the list of files written so far."""

    def __init__(self, out: Path):
        self.out = out
        self.files = []
        out.mkdir(parents=True, exist_ok=True)

    def write(self, name, text):
        (self.out / name).write_text(text)
        self.files.append(name)

    def tree(self, name, f):
        self.write(name, dumps(f, indent=2) + "\n")


def _grid(cfg, args, default):
    g = args.grid if args.grid is not None else cfg.int("grid", default)
    if g is None or g < 2:
        raise ConfigError("grid must be an integer >= 2")
    return g


def _precision(cfg, args):
    text = args.precision if args.precision is not None else cfg.str("precision", "f64")
    try:
        return pr.Precision.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc))


# -- commands ---------------------------------------------------------------

def cmd_eval(cfg, args, run, prec):
    """eval.csv: x, f, Df[, D2f]."""
    cfg.check_keys(COMMON | {"points", "second_derivative"})
    f = cfg.tree()
    if "points" in cfg.data:
        x = np.array(cfg.floats("points"))
    else:
        x = np.linspace(0.0, 1.0, _grid(cfg, args, 257))
    want2 = cfg.bool("second_derivative", f.has_d2) and f.has_d2
    with prec.context():
        xs = prec.asarray(x)
        jet = f.jet(xs, 2 if want2 else 1)
    cols = [pr.to_float(j) for j in jet]
    header = ["x", "f", "Df"] + (["D2f"] if want2 else [])
    run.write("eval.csv", csv_text(header, zip(x.tolist(), *[c.tolist() for c in cols])))
    run.tree("tree.json", f)


def cmd_fixed_points(cfg, args, run, prec):
    """fixed_points.csv: location, tangency, Df, D2f, sign_left, sign_right."""
    cfg.check_keys(COMMON | {"tol", "level"})
    f = cfg.tree()
    rep = fixed_points(f, tol=cfg.num("tol", 1e-12), level=cfg.int("level", 12))
    run.write("fixed_points.csv", csv_text(["location", "tangency", "Df", "D2f", "sign_left", "sign_right"],
                                           rep.rows()))
    run.write("identity_intervals.csv", csv_text(["lo", "hi"], rep.identity_intervals))
    run.write("summary.csv", summary_csv({"count": len(rep.points), "identity_intervals": len(rep.identity_intervals),
                                          "unresolved": len(rep.unresolved), "tol": rep.tol}))


def cmd_variation(cfg, args, run, prec):
    """variation.csv (n, V, V_over_n) for n <= N; summary.csv with refined V(f)."""
    cfg.check_keys(COMMON | {"interval", "N", "adapt"})
    f = cfg.tree()
    interval = cfg.pair("interval", (0.0, 1.0))
    grid = _grid(cfg, args, 512)
    N = cfg.int("N", 16)
    series = variation_series(f, N, interval, grid, cfg.bool("adapt", True))
    run.write("variation.csv", series.to_csv())
    run.write("summary.csv", summary_csv({"V": variation(f, interval), "interval_lo": interval[0],
                                          "interval_hi": interval[1], "grid_size": series.grid_size,
                                          "precision": prec.label}))


def cmd_asym_variation(cfg, args, run, prec):
    """series.csv (n, V, V_over_n); summary.csv with estimate and verdict."""
    cfg.check_keys(COMMON | {"N", "interval", "control", "adapt"})
    f = cfg.tree()
    control = cfg.tree("control", required=False)
    av = asymptotic_variation(f, cfg.int("N", 64), _grid(cfg, args, 512), cfg.pair("interval", (0.0, 1.0)),
                              control, cfg.bool("adapt", True))
    run.write("series.csv", av.series.to_csv())
    row = av.summary_row()
    row.update({"N": int(av.series.n[-1]), "grid_size": av.series.grid_size, "precision": prec.label})
    run.write("summary.csv", summary_csv(row))


def cmd_fatou_diagnostics(cfg, args, run, prec):
    """diagnostics.csv (x, n, A_n, delta); cocycle.csv (x, A(f x) - A(x) - 1) at seeded random points."""
    cfg.check_keys(COMMON | {"side", "p", "component", "points", "samples", "tol", "depth_cap"})
    f = cfg.tree()
    side = cfg.str("side", "left", {"left", "right"})
    p = cfg.num("p", None)
    comp = cfg.pair("component") if "component" in cfg.data else component_of(f, 0.5 if p is None else p)
    A = chart_for(f, side, p, comp, tol=cfg.num("tol", 1e-8), depth_cap=cfg.int("depth_cap", 100_000), precision=prec)
    a, b = comp
    pts = cfg.floats("points", [a + 0.25 * (b - a), 0.5 * (a + b), a + 0.75 * (b - a)])
    rows = []
    for x in pts:
        rows += [(x, n, float(an), d_) for n, an, d_ in A.diagnostics(x).rows]
    run.write("diagnostics.csv", csv_text(["x", "n", "A_n", "delta"], rows))
    seed = args.seed if args.seed is not None else cfg.int("seed", 0)
    rng = np.random.default_rng(seed)
    m = cfg.int("samples", 50)
    x = np.sort(a + (b - a) * (0.05 + 0.9 * rng.random(m)))
    res = pr.to_float(A(f(x))) - pr.to_float(A(x)) - 1.0
    run.write("cocycle.csv", csv_text(["x", "residual"], zip(x.tolist(), res.tolist())))
    run.write("summary.csv", summary_csv({"side": side, "max_cocycle_residual": float(np.max(np.abs(res))),
                                          "depth_cap": A.depth_cap, "tol": A.tol, "seed": seed,
                                          "precision": prec.label}))


def cmd_flow_time(cfg, args, run, prec):
    """flow.csv: x, f_t, Df_t; tree.json: the flow node."""
    cfg.check_keys(COMMON | {"side", "t", "p", "tol"})
    f = cfg.tree()
    g = flow_time(f, cfg.str("side", "left", {"left", "right"}), cfg.num("t"), cfg.num("p", None),
                  tol=cfg.num("tol", 1e-8), precision=prec)
    x = np.linspace(0.0, 1.0, _grid(cfg, args, 257))[1:-1]
    v, d = g.jet(x, 1)
    run.write("flow.csv", csv_text(["x", "f_t", "Df_t"], zip(x.tolist(), pr.to_float(v).tolist(),
                                                          pr.to_float(d).tolist())))
    run.tree("tree.json", g)


def cmd_root_defect(cfg, args, run, prec):
    """root_defect.csv: k, defect (sup |f_(1/k) - f^(1/k)| on the guarded grid)."""
    cfg.check_keys(COMMON | {"k", "p", "guard"})
    f = cfg.tree()
    ks = cfg.ints("k", [1, 2, 3])
    guard = cfg.num("guard", 0.05)
    grid = _grid(cfg, args, 257)
    p = cfg.num("p", None)
    vals = _pmap(lambda k: root_defect(f, k, grid, guard, 1 - guard, p), ks)
    run.write("root_defect.csv", csv_text(["k", "defect"], zip(ks, vals)))


def cmd_mather(cfg, args, run, prec):
    """mather.csv (t, M_t); summary.csv; commutation.csv (k, defect)."""
    cfg.check_keys(COMMON | {"p", "q", "k", "tol"})
    f = cfg.tree()
    grid = _grid(cfg, args, 256)
    M = mather(f, cfg.num("p", None), cfg.num("q", None), grid=grid, tol=cfg.num("tol", 1e-8), precision=prec)
    run.write("mather.csv", M.to_csv())
    ks = cfg.ints("k", [1, 2, 3])
    run.write("commutation.csv", csv_text(["k", "defect"], [(k, translation_commutation_defect(M, k, grid)) for k in ks]))
    run.write("summary.csv", summary_csv({"defect": triviality_defect(M), "seam_error": M.seam_error, "p": M.p,
                                          "q": M.q, "grid": grid, "depth_cap": 100_000, "precision": prec.label}))


def cmd_surgery(cfg, args, run, prec):
    """tree.json (g = f o h_l o ... o h_1); mather_f.csv, mather_g.csv; summary.csv."""
    cfg.check_keys(COMMON | {"pieces", "p", "tol"})
    f = cfg.tree()
    pieces = cfg.pieces()
    p = cfg.num("p", None)
    tol = cfg.num("tol", 1e-8)
    g = multi_surgery(f, pieces, p, tol)
    grid = _grid(cfg, args, 256)
    Mf, Mg = mather(f, p, grid=grid), mather(g, p, grid=grid)
    parts = [s.lift for s in reversed(pieces)]
    d, tau = aligned_distance(Mg, ComposedLift(parts + [Mf.lift]), grid)
    run.tree("tree.json", g)
    run.write("mather_f.csv", Mf.to_csv())
    run.write("mather_g.csv", Mg.to_csv())
    run.write("summary.csv", summary_csv({"pieces": len(pieces), "aligned_distance": d, "tau": tau,
                                          "defect_f": triviality_defect(Mf), "defect_g": triviality_defect(Mg),
                                          "grid": grid, "precision": prec.label}))


def cmd_trivialize(cfg, args, run, prec):
    """tree.json; placed.csv (piece, alpha, c1_size); summary.csv."""
    cfg.check_keys(COMMON | {"p", "eps_target", "delta", "tol"})
    f = cfg.tree()
    p = cfg.num("p", None)
    grid = _grid(cfg, args, 256)
    eps = cfg.num("eps_target", 0.05)
    g, rep = trivialize_mather(f, p, eps, cfg.num("delta", None), grid, cfg.num("tol", 1e-8), report=True)
    d0 = triviality_defect(mather(f, p, grid=grid))
    d1 = triviality_defect(mather(g, p, grid=grid)) if rep.placed else d0
    run.tree("tree.json", g)
    run.write("placed.csv", csv_text(["piece", "alpha", "c1_size"],
                                     [(i, s.alpha, s.size()) for i, s in enumerate(rep.placed)]))
    run.write("summary.csv", summary_csv({"beta": rep.beta, "q": rep.q, "variation_left": rep.variation_left,
                                          "pieces": len(rep.placed), "defect_before": d0, "defect_after": d1,
                                          "c0_distance": cl_distance(f, g, 0, 2049), "eps_target": eps,
                                          "grid": grid, "precision": prec.label}))


def cmd_fragment(cfg, args, run, prec):
    """fragments.json; fragments.csv (piece, alpha, c0_size, c1_size, id_lo, id_hi); summary.csv."""
    cfg.check_keys(COMMON - {"map"} | {"lift", "eps_target"})
    phi = cfg.circle("lift")
    eps = cfg.num("eps_target", 0.05)
    res = fragment(phi, eps)
    rows = []
    for i, s in enumerate(res.pieces):
        c0, c1 = s.c1_size()
        lo, hi = s.lift.identity_interval() if hasattr(s.lift, "identity_interval") else (float("nan"),) * 2
        rows.append((i, s.alpha, c0, c1, lo, hi))
    t = np.linspace(0.0, 1.0, _grid(cfg, args, 512), endpoint=False)
    err = float(np.max(np.abs(res.compose()(t) - phi(t))))
    run.write("fragments.json", json.dumps([s.to_dict() for s in res.pieces], indent=2, sort_keys=True) + "\n")
    run.write("fragments.csv", csv_text(["piece", "alpha", "c0_size", "c1_size", "id_lo", "id_hi"], rows))
    run.write("summary.csv", summary_csv({"pieces": len(res.pieces), "steps": res.steps, "rotation": res.rotation,
                                          "max_size": max(res.sizes, default=0.0), "recomposition_error": err,
                                          "eps_target": eps}))


def _experiment_params(cfg, name, args):
    """Typed parameters of a named experiment (strict)."""
    common = COMMON | {"name"}
    if name == "surgery-law":
        cfg.check_keys(common | {"pieces", "p"})
        return {"pieces": cfg.pieces(), "p": cfg.num("p", None), "grid": _grid(cfg, args, 256)}
    if name == "conjugate-power":
        cfg.check_keys(common | {"k", "p", "guard"})
        return {"ks": cfg.ints("k", [2, 3]), "p": cfg.num("p", None), "guard": cfg.num("guard", 0.05)}
    if name == "amplifier":
        cfg.check_keys(common | {"delta", "m", "n", "mu1", "mu2", "identity", "points"})
        return {"delta": cfg.pair("delta"), "m": cfg.int("m"), "n": cfg.int("n"), "mu1": cfg.num("mu1", 0.5),
                "mu2": cfg.num("mu2", 0.8), "identity": cfg.bool("identity", False), "points": cfg.int("points", 9)}
    if name == "theoremA-pipeline":
        cfg.check_keys(common | {"eps", "k", "p", "eps_target", "bernstein_degree"})
        return {"eps": cfg.num("eps", 0.05), "ks": cfg.ints("k", [2, 3]), "p": cfg.num("p", None),
                "eps_target": cfg.num("eps_target", 0.05), "bernstein_degree": cfg.int("bernstein_degree", None),
                "grid": _grid(cfg, args, 256)}
    if name == "theoremD-pipeline":
        cfg.check_keys(common | {"eps", "k", "p", "eps_target", "N"})
        return {"eps": cfg.num("eps", 0.05), "ks": cfg.ints("k", [2, 3]), "p": cfg.num("p", None),
                "eps_target": cfg.num("eps_target", 0.05), "N": cfg.int("N", 64), "grid": _grid(cfg, args, 256)}
    raise ConfigError(f"$.name must be one of {sorted(EXPERIMENTS)}")


def _emit(run, outcome, prec):
    for name, text in sorted(outcome.files.items()):
        run.write(name, text)
    for name, tree in sorted(outcome.trees.items()):
        run.tree(f"{name}.json", tree)
    row = dict(outcome.summary)
    row["precision"] = prec.label
    run.write("summary.csv", summary_csv(row))


def cmd_amplifier(cfg, args, run, prec):
    """gap.csv (n, gap, bound); spec.json; amplified.json; summary.csv."""
    f = cfg.tree()
    _emit(run, EXPERIMENTS["amplifier"](f, **_experiment_params(cfg, "amplifier", args)), prec)


def cmd_conjugate_power(cfg, args, run, prec):
    """conjugacy.csv (k, p, residual, Dh_p); summary.csv."""
    f = cfg.tree()
    _emit(run, EXPERIMENTS["conjugate-power"](f, **_experiment_params(cfg, "conjugate-power", args)), prec)


def cmd_experiment(cfg, args, run, prec):
    name = cfg.str("name", _ABSENT, set(EXPERIMENTS))
    params = _experiment_params(cfg, name, args)
    f = cfg.tree()
    _emit(run, EXPERIMENTS[name](f, **params), prec)


COMMANDS = {
    "eval": cmd_eval,
    "fixed-points": cmd_fixed_points,
    "variation": cmd_variation,
    "asym-variation": cmd_asym_variation,
    "fatou-diagnostics": cmd_fatou_diagnostics,
    "flow-time": cmd_flow_time,
    "root-defect": cmd_root_defect,
    "mather": cmd_mather,
    "surgery": cmd_surgery,
    "trivialize": cmd_trivialize,
    "fragment": cmd_fragment,
    "amplifier": cmd_amplifier,
    "conjugate-power": cmd_conjugate_power,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parabolica", description="Parabolic interval diffeomorphism toolkit.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--out", help="output directory (default: config 'output' or ./out-<command>)")
    ap.add_argument("--precision", help="f64 or bits:N")
    ap.add_argument("--grid", type=int, help="grid size override")
    ap.add_argument("--seed", type=int, help="seed for randomized sample points")
    return ap


def _fail(code, msg):
    print(f"parabolica: {msg}", file=sys.stderr)
    return code


def _code_for(exc) -> int:
    if isinstance(exc, StageError):
        return _code_for(exc.cause)
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, ConvergenceError):
        return 3
    return 4


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg_path = Path(args.config)
    try:
        try:
            data = json.loads(cfg_path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {cfg_path}: {exc.strerror}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {cfg_path} is not valid JSON: {exc}")
        cfg = Config(data, cfg_path.resolve().parent)
        prec = _precision(cfg, args)
        out = args.out or cfg.str("output", None) or f"out-{args.command}"
        _workers()
        run = Run(Path(out))
        with prec.context():
            COMMANDS[args.command](cfg, args, run, prec)
        manifest = {"command": args.command, "config": data, "version": _version(), "precision": prec.label,
                    "grid_override": args.grid, "seed": args.seed, "files": sorted(run.files)}
        (run.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except StageError as exc:
        return _fail(_code_for(exc), f"{exc}; diagnostics: {getattr(exc.cause, 'diagnostics', None) or {}}")
    except ConvergenceError as exc:
        return _fail(3, f"numerical non-convergence: {exc}; diagnostics: {getattr(exc, 'diagnostics', None) or {}}")
    except ConfigError as exc:
        return _fail(2, f"config error: {exc}")
    except (InvalidTreeError, DomainError, ParabolicaError) as exc:
        return _fail(4, f"invalid tree or domain: {exc}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
