"""Pivotal lambda grid, warm-started path fits and HBIC / validation selection."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, PathError
from .penalties import FAMILIES, PenaltySpec, lla_fit
from .solver import FitResult, SolverConfig, fit, pinball

RULES = ("hbic", "val")


@dataclass
class PathConfig:
    """Grid and selection settings.

    ``patience`` (None disables it) ends a path early once the selection
    criterion has failed to improve on its running minimum for that many
    consecutive grid points; the remaining points are left unfitted.
    """

    T: int = 50
    tau: float = 0.5
    selection_rule: str = "hbic"
    pivotal_sims: int = 1000
    pivotal_quantile: float = 0.9
    pivotal_scale: float = 1.0
    grid_ratio: float = 0.01
    patience: int | None = None
    warm_start: bool = True

    def __post_init__(self):
        rule = str(self.selection_rule).lower()
        rule = {"validation": "val", "validationloss": "val", "val_loss": "val"}.get(rule, rule)
        if rule not in RULES:
            raise ConfigurationError(f"unknown selection rule {self.selection_rule!r}")
        self.selection_rule = rule
        if int(self.T) < 1:
            raise ConfigurationError("the grid needs T >= 1 points")
        if not 0.0 < self.grid_ratio < 1.0:
            raise ConfigurationError("grid_ratio must lie in (0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if int(self.pivotal_sims) < 1:
            raise ConfigurationError("pivotal_sims must be positive")
        if not 0.0 < self.pivotal_quantile < 1.0:
            raise ConfigurationError("pivotal_quantile must lie in (0, 1)")
        if not self.pivotal_scale > 0:
            raise ConfigurationError("pivotal_scale must be positive")
        if self.patience is not None and int(self.patience) < 1:
            raise ConfigurationError("patience must be a positive integer or None")


@dataclass
class PathResult:
    """Fits along a decreasing lambda grid.

    ``fits[t]`` is None for grid points skipped by early stopping; their
    scores are NaN. ``selected`` indexes the minimizer of the active rule.
    """

    lambdas: np.ndarray
    fits: list
    hbic: np.ndarray
    val_loss: np.ndarray | None
    selected: int
    rule: str
    family: str
    tau: float
    sizes: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sizes is None:
            self.sizes = np.array([-1 if f is None else f.size for f in self.fits])

    @property
    def best(self) -> FitResult:
        return self.fits[self.selected]

    @property
    def n_fitted(self) -> int:
        return sum(f is not None for f in self.fits)

    @property
    def total_iterations(self) -> int:
        return sum(f.n_iter for f in self.fits if f is not None)

    @property
    def scores(self):
        return self.hbic if self.rule == "hbic" else self.val_loss

    def summary_rows(self):
        rows = []
        for t, f in enumerate(self.fits):
            rows.append({
                "index": t,
                "lambda": float(self.lambdas[t]),
                "size": None if f is None else f.size,
                "hbic": None if f is None else float(self.hbic[t]),
                "val_loss": None if f is None or self.val_loss is None else float(self.val_loss[t]),
                "iterations": None if f is None else f.n_iter,
                "converged": None if f is None else f.converged,
            })
        return rows

    def to_csv(self, path):
        cols = ["lambda", "size", "hbic", "val_loss", "iterations", "converged"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.summary_rows():
                if row["size"] is None:
                    continue
                vals = ["" if row[c] is None else repr(row[c]) for c in cols]
                fh.write(",".join(vals) + "\n")

    def to_dict(self, include_timing=True):
        return {
            "family": self.family,
            "tau": self.tau,
            "rule": self.rule,
            "selected": int(self.selected),
            "selected_lambda": float(self.lambdas[self.selected]),
            "lambdas": [float(v) for v in self.lambdas],
            "path": self.summary_rows(),
            "fit": self.best.to_dict(include_timing),
        }

    def to_json(self, path, include_timing=True):
        with open(path, "w") as fh:
            json.dump(self.to_dict(include_timing), fh, indent=2)


def _null_scores(Xf, tau, sims, rng, chunk=256):
    n = Xf.shape[0]
    out = np.empty(sims)
    for start in range(0, sims, chunk):
        m = min(chunk, sims - start)
        u = rng.uniform(size=(m, n))
        s = tau - (u <= tau)
        out[start:start + m] = np.max(np.abs(s @ Xf), axis=1) / n
    return out


def pivotal_lambda_max(design, tau, cfg: PathConfig | None = None, seed=0):
    cfg = cfg or PathConfig(tau=tau)
    Xf = np.delete(design.data, design.intercept_index, axis=1)
    if Xf.shape[1] == 0 or not np.any(Xf):
        raise DataError("the design has no nonzero feature column")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9e3779b9]))
    stats = _null_scores(Xf, tau, int(cfg.pivotal_sims), rng)
    return float(cfg.pivotal_scale * np.quantile(stats, cfg.pivotal_quantile))


def pivotal_lambda_grid(design, tau, cfg: PathConfig | None = None, seed=0):
    """Descending log-spaced grid from the simulated null-score quantile.

    The null score is ``max_j |(1/n) sum_i x_ij (tau - 1{u_i <= tau})|`` with
    ``u_i`` uniform, which does not depend on the error law.
    """
    cfg = cfg or PathConfig(tau=tau)
    lmax = pivotal_lambda_max(design, tau, cfg, seed)
    if cfg.T == 1:
        return np.array([lmax])
    return lmax * np.geomspace(1.0, cfg.grid_ratio, int(cfg.T))


def hbic(objective_sum, active_size, n, p):
    """``log(sum rho) + |A| * log(log n) / n * log p``; -inf for a perfect fit."""
    if objective_sum < 0:
        raise ConfigurationError("the loss sum cannot be negative")
    if objective_sum == 0:
        return -math.inf
    return math.log(objective_sum) + active_size * math.log(math.log(n)) / n * math.log(p)


def validation_loss(result: FitResult, X_val, y_val, tau):
    return float(np.mean(pinball(np.asarray(y_val, dtype=float) - result.predict(X_val), tau)))


class _Chain:
    """Per-family bookkeeping along one path."""

    def __init__(self, family, T, has_val):
        self.family = family
        self.fits = [None] * T
        self.hbic = np.full(T, np.nan)
        self.val = np.full(T, np.nan) if has_val else None
        self.best = math.inf
        self.stale = 0
        self.done = False


def path_fit_families(design, y, families, cfg: PathConfig | None = None, validation=None,
                      seed=0, solver_config: SolverConfig | None = None, lambdas=None,
                      a=None, lla_steps=1):
    """Path fits for several penalty families sharing one lasso chain.

    The lasso fit at each lambda, warm-started from the previous lambda's
    lasso state, doubles as LLA step 0 for SCAD and MCP.

    Returns
    -------
    dict
        Family name to ``PathResult``.
    """
    cfg = cfg or PathConfig()
    families = [PenaltySpec(f, cfg.tau).family for f in families]
    if not families:
        raise ConfigurationError("no penalty family requested")
    if cfg.selection_rule == "val" and validation is None:
        raise ConfigurationError("validation selection needs validation data")
    y = np.asarray(y, dtype=float)
    grid = (pivotal_lambda_grid(design, cfg.tau, cfg, seed) if lambdas is None
            else np.asarray(lambdas, dtype=float))
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigurationError("empty lambda grid")
    if np.any(np.diff(grid) >= 0):
        raise ConfigurationError("the lambda grid must be strictly decreasing")
    T = grid.size
    n = design.n
    p = design.p_total - 1
    chains = {f: _Chain(f, T, validation is not None) for f in families}
    lasso_state = None
    for t, lam in enumerate(grid):
        live = [c for c in chains.values() if not c.done]
        if not live:
            break
        base = fit(design, y, PenaltySpec("lasso", cfg.tau, lam), solver_config,
                   lasso_state if cfg.warm_start else None)
        lasso_state = base.state
        for chain in live:
            if chain.family == "lasso":
                res = base
            else:
                res = lla_fit(design, y, PenaltySpec(chain.family, cfg.tau, lam, a=a,
                                                     lla_steps=lla_steps),
                              solver_config, initial_fit=base)
            if not np.isfinite(res.objective):
                continue
            chain.fits[t] = res
            chain.hbic[t] = hbic(res.loss * n, res.size, n, p)
            if validation is not None:
                chain.val[t] = validation_loss(res, validation[0], validation[1], cfg.tau)
            score = chain.hbic[t] if cfg.selection_rule == "hbic" else chain.val[t]
            if score < chain.best:
                chain.best, chain.stale = score, 0
            else:
                chain.stale += 1
                if cfg.patience is not None and chain.stale >= cfg.patience:
                    chain.done = True
    out = {}
    for f, chain in chains.items():
        scores = chain.hbic if cfg.selection_rule == "hbic" else chain.val
        if all(r is None for r in chain.fits):
            raise PathError(f"no fit on the {f} path produced a usable result")
        masked = np.where(np.isnan(scores), np.inf, scores)
        out[f] = PathResult(grid, chain.fits, chain.hbic, chain.val, int(np.argmin(masked)),
                            cfg.selection_rule, f, cfg.tau)
    return out


def path_fit(design, y, family="lasso", cfg: PathConfig | None = None, validation=None,
             seed=0, solver_config: SolverConfig | None = None, lambdas=None, a=None,
             lla_steps=1) -> PathResult:
    """Warm-started fits over the grid, scored by HBIC and optional validation loss.

    Parameters
    ----------
    design : BlockedDesign
        Standardized design.
    y : array of shape (n,)
    family : {"lasso", "scad", "mcp"}
    cfg : PathConfig, optional
    validation : tuple (X_val, y_val), optional
        ``X_val`` on the original scale with the same column layout
        (intercept included) as the training design.
    seed : int
        Seed of the pivotal simulation.
    lambdas : array, optional
        Explicit strictly decreasing grid replacing the pivotal one.
    """
    family = PenaltySpec(family, 0.5).family
    return path_fit_families(design, y, [family], cfg, validation, seed, solver_config,
                             lambdas, a, lla_steps)[family]


def config_dict(cfg: PathConfig):
    return asdict(cfg)


__all__ = [
    "FAMILIES", "PathConfig", "PathResult", "hbic", "path_fit", "path_fit_families",
    "pivotal_lambda_grid", "pivotal_lambda_max", "validation_loss",
]
