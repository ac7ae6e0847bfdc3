"""Command-line entry point: ``fsqr {fit,path,predict,simulate}``.

Options come from an optional TOML file (``--config``) and from flags; flags
win. Every run writes ``resolved_config.json`` next to its outputs. Exit
status is 0 on success, 1 on error and 2 when a result was written but the
solver stopped at its iteration cap.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .design import load_matrix, load_vector, partition, standardize
from .errors import ConfigurationError, FSQRError
from .path import PathConfig, path_fit
from .penalties import PenaltySpec, lla_fit
from .prediction import CoverageReport, QuantilePair, coverage
from .simulation import StudySpec, run_study
from .solver import SolverConfig, fit

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2

# option name -> default, shared by fit and path
SOLVER_DEFAULTS = {
    "x": None, "y": None, "tau": 0.5, "penalty": "lasso", "a": None, "lla_steps": 1,
    "g": 5, "mu": None, "eta_safety": 1.05, "tol_primal": 1e-5, "tol_change": 1e-6,
    "max_iter": 20000, "workers": None, "seed": 0, "add_intercept": True, "out_dir": "fsqr_out",
}
FIT_DEFAULTS = {**SOLVER_DEFAULTS, "lambda": None, "trace": False}
PATH_DEFAULTS = {
    **SOLVER_DEFAULTS, "T": 50, "select": "hbic", "xval": None, "yval": None,
    "pivotal_sims": 1000, "pivotal_quantile": 0.9, "pivotal_scale": 1.0, "grid_ratio": 0.01,
    "patience": None,
}
PREDICT_DEFAULTS = {"lo": None, "hi": None, "x": None, "y": None, "add_intercept": True,
                    "out_dir": "fsqr_out"}


def _flatten(table):
    out = {}
    for key, val in table.items():
        if isinstance(val, dict):
            out.update(_flatten(val))
        else:
            out[key.replace("-", "_")] = val
    return out


def load_toml(path):
    with open(path, "rb") as fh:
        return _flatten(tomllib.load(fh))


def resolve(args, defaults):
    """Merge defaults, TOML values and explicitly given flags, in that order."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        file_vals = load_toml(args.config)
        unknown = sorted(set(file_vals) - set(defaults))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(file_vals)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if "workers" in cfg:
        env = os.environ.get("FSQR_WORKERS")
        if getattr(args, "workers", None) is None and env:
            cfg["workers"] = int(env)
        if cfg["workers"] is None:
            cfg["workers"] = max(1, min(int(cfg["g"]), os.cpu_count() or 1))
    return cfg


def _need(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigurationError(f"missing required option(s): {', '.join('--' + k for k in missing)}")


def _solver_config(cfg):
    if int(cfg["g"]) < 1:
        raise ConfigurationError(f"G must be a positive integer, got {cfg['g']}")
    return SolverConfig(mu=cfg["mu"], eta_safety=cfg["eta_safety"], tol_primal=cfg["tol_primal"],
                        tol_change=cfg["tol_change"], max_iter=int(cfg["max_iter"]),
                        n_workers=int(cfg["workers"]), record_trace=bool(cfg.get("trace", False)))


def _out_dir(cfg):
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _load_design(cfg):
    X, names = load_matrix(cfg["x"], add_intercept=bool(cfg["add_intercept"]))
    y = load_vector(cfg["y"])
    if y.shape[0] != X.shape[0]:
        raise FSQRError(f"{X.shape[0]} rows in the design but {y.shape[0]} responses")
    G = int(cfg["g"])
    if G > X.shape[1]:
        raise ConfigurationError(f"G = {G} exceeds the {X.shape[1]} design columns")
    design, _ = standardize(partition(X, G, seed=int(cfg["seed"])))
    return design, y, names


def _penalty(cfg, lam):
    return PenaltySpec(cfg["penalty"], float(cfg["tau"]), float(lam), a=cfg["a"],
                       lla_steps=int(cfg["lla_steps"]))


def cmd_fit(args):
    cfg = resolve(args, FIT_DEFAULTS)
    _need(cfg, "x", "y", "lambda")
    penalty = _penalty(cfg, cfg["lambda"])
    scfg = _solver_config(cfg)
    design, y, names = _load_design(cfg)
    out = _out_dir(cfg)
    _write_json(out / "resolved_config.json", {"command": "fit", "version": __version__, **cfg})
    result = lla_fit(design, y, penalty, scfg) if penalty.concave else fit(design, y, penalty, scfg)
    doc = result.to_dict()
    doc["feature_names"] = names[1:]
    _write_json(out / "fit.json", doc)
    if cfg["trace"] and result.trace is not None:
        result.trace.to_csv(out / "trace.csv")
    print(f"lambda={result.lam:g} size={result.size} iterations={result.n_iter} "
          f"converged={result.converged} objective={result.objective:.10g}")
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def cmd_path(args):
    cfg = resolve(args, PATH_DEFAULTS)
    _need(cfg, "x", "y")
    pcfg = PathConfig(T=int(cfg["T"]), tau=float(cfg["tau"]), selection_rule=cfg["select"],
                      pivotal_sims=int(cfg["pivotal_sims"]),
                      pivotal_quantile=float(cfg["pivotal_quantile"]),
                      pivotal_scale=float(cfg["pivotal_scale"]), grid_ratio=float(cfg["grid_ratio"]),
                      patience=None if cfg["patience"] is None else int(cfg["patience"]))
    _penalty(cfg, 0.0)
    scfg = _solver_config(cfg)
    validation = None
    if cfg["xval"] or cfg["yval"]:
        _need(cfg, "xval", "yval")
        Xv, _ = load_matrix(cfg["xval"], add_intercept=bool(cfg["add_intercept"]))
        validation = (Xv, load_vector(cfg["yval"]))
    if pcfg.selection_rule == "val" and validation is None:
        raise ConfigurationError("--select val needs --xval and --yval")
    design, y, names = _load_design(cfg)
    if validation is not None and validation[0].shape[1] != design.p_total:
        raise FSQRError("validation design does not match the training columns")
    out = _out_dir(cfg)
    _write_json(out / "resolved_config.json", {"command": "path", "version": __version__, **cfg})
    res = path_fit(design, y, cfg["penalty"], pcfg, validation, seed=int(cfg["seed"]),
                   solver_config=scfg, a=cfg["a"], lla_steps=int(cfg["lla_steps"]))
    doc = res.to_dict()
    doc["fit"]["feature_names"] = names[1:]
    _write_json(out / "path.json", doc)
    _write_json(out / "fit.json", doc["fit"])
    res.to_csv(out / "path.csv")
    best = res.best
    print(f"selected lambda={res.lambdas[res.selected]:g} (index {res.selected}) "
          f"size={best.size} rule={res.rule}")
    return EXIT_OK if best.converged else EXIT_NONCONVERGED


def load_model(path):
    """Read a fit JSON (or a path JSON, whose selected fit is used) into ``(tau, coef)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if "fit" in doc and "coefficients" not in doc:
        doc = doc["fit"]
    try:
        p = int(doc["n_features"])
        beta = np.zeros(p + 1)
        beta[0] = float(doc["intercept"])
        for key, val in doc["coefficients"].items():
            beta[int(key) + 1] = float(val)
        return float(doc["tau"]), beta
    except (KeyError, ValueError, IndexError) as exc:
        raise FSQRError(f"{path}: not a fit result ({exc})") from None


def cmd_predict(args):
    cfg = resolve(args, PREDICT_DEFAULTS)
    _need(cfg, "lo", "hi", "x")
    tau_lo, b_lo = load_model(cfg["lo"])
    tau_hi, b_hi = load_model(cfg["hi"])
    pair = QuantilePair(tau_lo, b_lo, tau_hi, b_hi)
    X, _ = load_matrix(cfg["x"], add_intercept=bool(cfg["add_intercept"]))
    if X.shape[1] != b_lo.shape[0]:
        raise FSQRError(f"test design has {X.shape[1] - 1} features, models have {b_lo.shape[0] - 1}")
    out = _out_dir(cfg)
    _write_json(out / "resolved_config.json", {"command": "predict", "version": __version__, **cfg})
    lo, hi = pair.band(X)
    with open(out / "predictions.csv", "w") as fh:
        fh.write(f"q_{tau_lo:g},q_{tau_hi:g},crossed\n")
        for a, b in zip(lo, hi):
            fh.write(f"{float(a)!r},{float(b)!r},{int(a > b)}\n")
    if cfg["y"]:
        y = load_vector(cfg["y"])
        rep = coverage(pair, X, y)
        rep.to_json(out / "coverage.json")
        with open(out / "coverage.csv", "w") as fh:
            fh.write(CoverageReport.csv_header() + "\n" + rep.csv_line() + "\n")
        print(f"coverage={rep.coverage:.4f} lower={rep.lower_tail:.4f} upper={rep.upper_tail:.4f} "
              f"crossed={rep.crossing_count} n={rep.n_test}")
    return EXIT_OK


STUDY_KEYS = set(StudySpec.__dataclass_fields__)


def cmd_simulate(args):
    raw = load_toml(args.config) if args.config else {}
    unknown = sorted(set(raw) - STUDY_KEYS - {"out_dir"})
    if unknown:
        raise ConfigurationError(f"unknown study keys: {', '.join(unknown)}")
    file_out = raw.pop("out_dir", "fsqr_out")
    out_dir = args.out_dir or file_out
    for key in ("replicates", "seed", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    if args.workers is None and os.environ.get("FSQR_WORKERS"):
        raw["workers"] = int(os.environ["FSQR_WORKERS"])
    for key in ("families", "taus", "coverage_taus"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(raw[key])
    try:
        spec = StudySpec(**raw)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved_config.json",
                {"command": "simulate", "version": __version__, **spec.to_dict()})
    res = run_study(spec)
    res.write_csv(out / "metrics.csv")
    res.write_replicates_csv(out / "replicates.csv")
    if spec.coverage_taus is not None:
        res.write_coverage_csv(out / "coverage.csv")
    for row in res.table():
        print(f"{row['algorithm']} tau={row['tau']:g} AE={row['AE']:.4f} P1={row['P1']:.2f} "
              f"P2={row['P2']:.2f} Size={row['Size']:.2f} Time={row['Time']:.1f}s")
    nonconv = sum(not m.converged for m in res.metrics)
    return EXIT_NONCONVERGED if nonconv else EXIT_OK


def _solver_flags(p):
    p.add_argument("--config", help="TOML file with option values")
    p.add_argument("--x", help="design matrix (CSV with header or FSQR1 binary)")
    p.add_argument("--y", help="response vector")
    p.add_argument("--tau", type=float)
    p.add_argument("--penalty", choices=["lasso", "scad", "mcp"])
    p.add_argument("--a", type=float, help="concavity parameter")
    p.add_argument("--lla-steps", dest="lla_steps", type=int)
    p.add_argument("--g", type=int, help="number of column blocks")
    p.add_argument("--mu", type=float)
    p.add_argument("--eta-safety", dest="eta_safety", type=float)
    p.add_argument("--tol-primal", dest="tol_primal", type=float)
    p.add_argument("--tol-change", dest="tol_change", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-intercept", dest="add_intercept", action="store_const", const=False,
                   help="fail instead of adding an intercept column when none is present")
    p.add_argument("--out-dir", dest="out_dir")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1; status 2 is reserved for non-converged runs."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="fsqr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit at one penalty level")
    _solver_flags(p)
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--trace", action="store_const", const=True, help="also write trace.csv")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="fit along a lambda grid and select one")
    _solver_flags(p)
    p.add_argument("--T", "--t", dest="T", type=int, help="grid length")
    p.add_argument("--select", choices=["hbic", "val"])
    p.add_argument("--xval")
    p.add_argument("--yval")
    p.add_argument("--pivotal-sims", dest="pivotal_sims", type=int)
    p.add_argument("--pivotal-quantile", dest="pivotal_quantile", type=float)
    p.add_argument("--pivotal-scale", dest="pivotal_scale", type=float)
    p.add_argument("--grid-ratio", dest="grid_ratio", type=float)
    p.add_argument("--patience", type=int)
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("predict", help="quantile band and coverage from two fitted models")
    p.add_argument("--config")
    p.add_argument("--lo", help="fit JSON of the lower quantile model")
    p.add_argument("--hi", help="fit JSON of the upper quantile model")
    p.add_argument("--x", help="test design")
    p.add_argument("--y", help="test responses (optional)")
    p.add_argument("--no-intercept", dest="add_intercept", action="store_const", const=False)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="run a replicate study from a TOML file")
    p.add_argument("--config", help="study TOML")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FSQRError, OSError, ValueError, TypeError, tomllib.TOMLDecodeError) as exc:
        print(f"fsqr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
