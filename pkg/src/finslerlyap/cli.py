"""Command-line entry point.

Exit codes: 0 certified/pass, 1 counterexample/fail, 2 inconclusive,
3 usage or configuration error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import os
import sys
from typing import Optional

import jsonschema
import numpy as np

from . import certify as C
from .dynamics import CatalogError, Region, make_builtin
from .distance import empirical_decay, finsler_distance, pseudo_distance
from .experiments import SCENARIOS, run_scenario
from .finsler import FinslerLyapunov, make_metric, property_suite, quadratic

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3
COMMANDS = ("certify", "lasalle", "bendixson", "distance", "decay", "scenario", "props")

_num = {"type": "number"}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "system": {"type": "string"},
        "params": {"type": "object"},
        "metric": {"type": "string"},
        "metric_params": {"type": "object"},
        "region": {"type": "string"},
        "grid": {"type": "integer", "minimum": 0},
        "random": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "directions": {"type": "integer", "minimum": 0},
        "times": _vec,
        "out": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "engine": {"enum": ["finsler", "measure", "lmi"]},
        "mode": {"enum": ["is", "ias", "ies"]},
        "norm": {"enum": ["1", "2", "inf"]},
        "P": _mat,
        "Q": {"oneOf": [_num, _mat]},
        "rate_min": {"type": "number", "exclusiveMinimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "alpha_matrix": _mat,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "x1": _vec,
        "x2": _vec,
        "N": {"type": "integer", "minimum": 1},
        "max_iters": {"type": "integer", "minimum": 1},
        "samples": {"type": "integer", "minimum": 2},
        "name": {"enum": sorted(SCENARIOS)},
        "overrides": {"type": "object"},
    },
}


class UsageError(Exception):
    pass


def _json_arg(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from None


def _add_common(p, system=True, metric=True, region=True, plan=True):
    if system:
        p.add_argument("--system", help="catalog system name")
        p.add_argument("--params", type=_json_arg, help="system parameters as JSON")
    if metric:
        p.add_argument("--metric", help="catalog metric name")
        p.add_argument("--metric-params", dest="metric_params", type=_json_arg, help="metric parameters as JSON")
    if region:
        p.add_argument("--region", help='"[-3,3]", "[[a,b],[c,d]]", "ball:r" or "cube:lo,hi"')
    if plan:
        p.add_argument("--grid", type=int, help="grid points per dimension")
        p.add_argument("--random", type=int, help="extra uniform random states")
        p.add_argument("--directions", type=int, help="random unit displacement directions per state")
        p.add_argument("--times", type=_json_arg, help="time samples as a JSON list")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the report (and CSV series) to this directory")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--threads", type=int, help="worker threads (env FINSLER_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="finslerlyap", description="Contraction certificates via Finsler-Lyapunov functions.")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("certify", help="check the contraction inequality over a region")
    _add_common(p)
    p.add_argument("--engine", choices=["finsler", "measure", "lmi"])
    p.add_argument("--mode", choices=["is", "ias", "ies"])
    p.add_argument("--norm", choices=["1", "2", "inf"])
    p.add_argument("--P", type=_json_arg, help="LMI weight matrix")
    p.add_argument("--Q", type=_json_arg, help="LMI margin: matrix, or scalar lam for Q = lam P")
    p.add_argument("--rate-min", dest="rate_min", type=float)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("lasalle", help="pointwise audit LHS <= -dx' W dx plus probe decay")
    _add_common(p)
    p.add_argument("--alpha-matrix", dest="alpha_matrix", type=_json_arg, help="W as a JSON matrix")
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)

    p = sub.add_parser("bendixson", help="forward contraction along the flow direction")
    _add_common(p)
    p.add_argument("--rate-min", dest="rate_min", type=float)

    p = sub.add_parser("distance", help="Finsler distance by polyline optimization")
    _add_common(p, region=False, plan=False)
    p.add_argument("--x1", type=_json_arg)
    p.add_argument("--x2", type=_json_arg)
    p.add_argument("--N", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("decay", help="distance between two solutions over time")
    _add_common(p, region=False, plan=False)
    p.add_argument("--x1", type=_json_arg)
    p.add_argument("--x2", type=_json_arg)
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--samples", type=int, help="number of distance samples on [0, T]")
    p.add_argument("--N", type=int)

    p = sub.add_parser("scenario", help="run a named worked example")
    p.add_argument("name", nargs="?", help=", ".join(sorted(SCENARIOS)))
    p.add_argument("--overrides", type=_json_arg, help="scenario parameters as JSON")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("props", help="metric property suite")
    _add_common(p, region=False, plan=False)
    p.add_argument("--samples", type=int)
    p.add_argument("--tol", type=float)
    return ap


def _merge_config(ns: argparse.Namespace) -> dict:
    cfg = {}
    if getattr(ns, "config", None):
        try:
            with open(ns.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"config schema violation: {exc.message}") from None
    if cfg.get("command", ns.command) != ns.command:
        raise UsageError(f"config is for command {cfg['command']!r}, not {ns.command!r}")
    for k, v in vars(ns).items():
        if k != "config" and v is not None:
            cfg[k] = v
    cfg["command"] = ns.command
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"invalid option: {exc.message}") from None
    return cfg


def parse_region(text: str, dim: int) -> Region:
    text = text.strip()
    try:
        if text.startswith("ball:"):
            return Region.ball(dim, float(text[5:]))
        if text.startswith("cube:"):
            lo, hi = (float(v) for v in text[5:].split(","))
            return Region.cube(dim, lo, hi)
        box = json.loads(text)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot parse region {text!r}: {exc}") from None
    arr = np.asarray(box, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (dim, 1))
    if arr.shape != (dim, 2):
        raise UsageError(f"region {text!r} does not match state dimension {dim}")
    return Region(tuple(map(tuple, arr.tolist())))


def default_grid(dim: int) -> int:
    return {1: 200, 2: 21, 3: 9}.get(dim, 4)


def _threads(cfg) -> int:
    if cfg.get("threads"):
        return int(cfg["threads"])
    env = os.environ.get("FINSLER_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"FINSLER_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError(f"{cfg['command']} needs " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _system(cfg):
    _require(cfg, "system")
    return make_builtin(cfg["system"], cfg.get("params"))


def _metric(cfg, dim: Optional[int] = None) -> FinslerLyapunov:
    if cfg.get("metric") is None and dim is not None:
        return quadratic(np.eye(dim))
    _require(cfg, "metric")
    params = dict(cfg.get("metric_params") or {})
    if isinstance(params.get("k"), str):
        params["k"] = float(params["k"])
    return make_metric(cfg["metric"], params)


def _plan(cfg, dim: int) -> C.SamplingPlan:
    grid = cfg.get("grid")
    return C.SamplingPlan(grid_per_dim=default_grid(dim) if grid is None else grid,
                          random_samples=cfg.get("random") or 0, seed=cfg.get("seed") or 0,
                          time_samples=tuple(cfg.get("times") or (0.0,)),
                          delta_sphere_samples=4 if cfg.get("directions") is None else cfg["directions"])


def _verdict_code(verdict: str) -> int:
    if verdict.startswith("certified"):
        return EXIT_OK
    return EXIT_FAIL if verdict == C.COUNTEREXAMPLE else EXIT_INCONCLUSIVE


def _norm(text):
    return {"1": 1, "2": 2, "inf": np.inf}[text or "2"]


def cmd_certify(cfg):
    s = _system(cfg)
    _require(cfg, "region")
    region = parse_region(cfg["region"], s.dim)
    plan = _plan(cfg, s.dim)
    engine = cfg.get("engine") or "finsler"
    rate_min = cfg.get("rate_min") or C.RATE_MIN
    if engine == "measure":
        rep = C.certify_measure(s, region, _norm(cfg.get("norm")), plan, c_min=rate_min)
    elif engine == "lmi":
        _require(cfg, "P", "Q")
        rep = C.certify_lmi(s, cfg["P"], cfg["Q"], region, plan, tol=cfg.get("tol") or C.LHS_TOL)
    else:
        V = _metric(cfg)
        mode = cfg.get("mode") or "ies"
        alpha = {"is": "zero", "ias": "classK", "ies": "linear"}[mode]
        # class-K decay that saturates: rate_min * V / (1 + V)
        afn = (lambda v: rate_min * v / (1.0 + v)) if alpha == "classK" else None
        rep = C.certify_region(s, V, region, plan, alpha, rate_min, afn, cfg.get("tol") or C.LHS_TOL,
                               workers=_threads(cfg))
    return rep.to_dict(), _verdict_code(rep.verdict), {}


def cmd_lasalle(cfg):
    s = _system(cfg)
    _require(cfg, "region", "alpha_matrix")
    V = _metric(cfg)
    W = np.asarray(cfg["alpha_matrix"], dtype=float)
    if W.shape != (s.dim, s.dim):
        raise UsageError("alpha matrix must be dim x dim")
    rep = C.lasalle(s, V, lambda x, d: float(d @ W @ d), parse_region(cfg["region"], s.dim),
                    _plan(cfg, s.dim), T_horizon=cfg.get("T") or 40.0, dt=cfg.get("dt") or 1e-2)
    return rep.to_dict(), _verdict_code(rep.verdict), {}


def cmd_bendixson(cfg):
    s = _system(cfg)
    _require(cfg, "region")
    rep = C.bendixson(s, _metric(cfg, s.dim), parse_region(cfg["region"], s.dim), _plan(cfg, s.dim),
                      rate_min=cfg.get("rate_min") or C.RATE_MIN)
    return rep.to_dict(), _verdict_code(rep.verdict), {}


def cmd_distance(cfg):
    _require(cfg, "x1", "x2")
    V = _metric(cfg)
    space = _system(cfg).space if cfg.get("system") else None
    system = _system(cfg) if cfg.get("system") else None
    kw = dict(N=cfg.get("N") or 32, max_iters=cfg.get("max_iters") or 5000, tol=cfg.get("tol") or 1e-8, space=space)
    if V.horizontal is not None:
        res = pseudo_distance(V, V.horizontal, cfg["x1"], cfg["x2"], system=system, **kw)
    else:
        res = finsler_distance(V, cfg["x1"], cfg["x2"], **kw)
    return res.to_dict(), EXIT_OK if res.converged else EXIT_INCONCLUSIVE, {}


def cmd_decay(cfg):
    _require(cfg, "x1", "x2")
    s = _system(cfg)
    V = _metric(cfg)
    T = cfg.get("T") or 10.0
    grid = np.linspace(0.0, T, cfg.get("samples") or 11)
    res = empirical_decay(s, V, cfg["x1"], cfg["x2"], grid, N=cfg.get("N") or 32, dt=cfg.get("dt") or 1e-2)
    code = EXIT_INCONCLUSIVE if (res.degenerate or res.rate is None or not res.converged) else EXIT_OK
    return res.to_dict(), code, {"decay.csv": res}


def cmd_scenario(cfg):
    _require(cfg, "name")
    if cfg["name"] not in SCENARIOS:
        raise UsageError(f"unknown scenario {cfg['name']!r}; choose from {sorted(SCENARIOS)}")
    try:
        rep = run_scenario(cfg["name"], cfg.get("overrides"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    series = {f"{rep.name}_{k}.csv": v for k, v in rep.series.items()}
    return rep.to_dict(), EXIT_OK if rep.passed else EXIT_FAIL, series


def cmd_props(cfg):
    V = _metric(cfg)
    if cfg.get("system"):
        s = _system(cfg)
        space = s.space
    else:
        from .geometry import CoordinateSpace

        s = None
        dim = np.asarray((cfg.get("metric_params") or {}).get("P", [[0.0]])).shape[0]
        dim = (cfg.get("metric_params") or {}).get("n", dim)
        space = CoordinateSpace.euclidean(int(dim))
    rep = property_suite(V, space, cfg.get("samples") or 200, cfg.get("seed") or 0, system=s,
                         tol=cfg.get("tol") or 1e-9)
    return rep.to_dict(), EXIT_OK if rep.passed else EXIT_FAIL, {}


HANDLERS = {"certify": cmd_certify, "lasalle": cmd_lasalle, "bendixson": cmd_bendixson,
            "distance": cmd_distance, "decay": cmd_decay, "scenario": cmd_scenario, "props": cmd_props}


def _clean(v):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def render(report: dict, cfg: dict, code: int, timestamp: Optional[str] = None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg["command"],
        "config": {k: v for k, v in cfg.items() if k not in ("out", "threads")},
        "exit_code": code,
        "report": report,
        "timestamp": timestamp or datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    return json.dumps(_clean(doc), indent=2, sort_keys=True)


def run(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if ns.command is None:
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _merge_config(ns)
        report, code, series = HANDLERS[ns.command](cfg)
    except (UsageError, CatalogError, TypeError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, CatalogError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    text = render(report, cfg, code)
    out = cfg.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, f"{ns.command}.json")
        with open(path, "w") as fh:
            fh.write(text + "\n")
        for fname, obj in series.items():
            obj.to_csv(os.path.join(out, fname))
        print(path)
    else:
        print(text)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
