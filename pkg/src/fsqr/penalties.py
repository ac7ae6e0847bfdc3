"""Penalty families and the local linear approximation driver for SCAD and MCP."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .solver import FitResult, SolverConfig, fit

FAMILIES = ("lasso", "scad", "mcp")
DEFAULT_A = {"scad": 3.7, "mcp": 3.0}


@dataclass(frozen=True)
class PenaltySpec:
    """Quantile level plus penalty family and its parameters.

    ``weights`` (optional) overrides the uniform ``lam`` weights of a lasso
    penalty; the intercept entry is forced to 0 whatever it holds.
    """

    family: str = "lasso"
    tau: float = 0.5
    lam: float = 0.0
    weights: np.ndarray | None = None
    a: float | None = None
    lla_steps: int = 1

    def __post_init__(self):
        fam = str(self.family).lower()
        if fam in ("l1", "weighted_l1", "weightedl1"):
            fam = "lasso"
        if fam not in FAMILIES:
            raise ConfigurationError(f"unknown penalty family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ConfigurationError(f"lambda must be finite and nonnegative, got {self.lam}")
        if fam != "lasso":
            a = DEFAULT_A[fam] if self.a is None else float(self.a)
            if fam == "scad" and not a > 2:
                raise ConfigurationError(f"SCAD requires a > 2, got {a}")
            if fam == "mcp" and not a > 1:
                raise ConfigurationError(f"MCP requires a > 1, got {a}")
            object.__setattr__(self, "a", a)
            if int(self.lla_steps) < 1:
                raise ConfigurationError("lla_steps must be at least 1")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ConfigurationError("weights must be finite and nonnegative")
            object.__setattr__(self, "weights", w)

    @property
    def concave(self) -> bool:
        return self.family != "lasso"

    def weight_vector(self, p_total, intercept_index=0):
        if self.weights is not None:
            if self.weights.shape != (p_total,):
                raise ConfigurationError(
                    f"weights of shape {self.weights.shape}, expected ({p_total},)")
            w = self.weights.copy()
        else:
            w = np.full(p_total, float(self.lam))
        w[intercept_index] = 0.0
        return w

    def derivative(self, beta_abs):
        """Folded-concave derivative ``p'_lambda(|beta|)``; lasso gives ``lambda``."""
        if self.family == "scad":
            return scad_derivative(beta_abs, self.lam, self.a)
        if self.family == "mcp":
            return mcp_derivative(beta_abs, self.lam, self.a)
        return np.full_like(np.asarray(beta_abs, dtype=float), self.lam)

    def lasso(self, weights=None) -> "PenaltySpec":
        """The weighted-l1 problem used as one LLA step."""
        return PenaltySpec("lasso", self.tau, self.lam, weights)


def scad_derivative(beta_abs, lam, a=3.7):
    if not a > 2:
        raise ConfigurationError(f"SCAD requires a > 2, got {a}")
    b = np.abs(np.asarray(beta_abs, dtype=float))
    mid = np.maximum(a * lam - b, 0.0) / (a - 1.0)
    out = np.where(b <= lam, lam, np.where(b >= a * lam, 0.0, mid))
    return out if out.ndim else float(out)


def mcp_derivative(beta_abs, lam, a=3.0):
    if not a > 1:
        raise ConfigurationError(f"MCP requires a > 1, got {a}")
    b = np.abs(np.asarray(beta_abs, dtype=float))
    out = np.where(b >= a * lam, 0.0, np.maximum(lam - b / a, 0.0))
    return out if out.ndim else float(out)


def lla_weights(penalty: PenaltySpec, beta_std, intercept_index=0):
    w = penalty.derivative(np.abs(beta_std))
    w = np.clip(np.asarray(w, dtype=float), 0.0, penalty.lam)
    w[intercept_index] = 0.0
    return w


def lla_fit(design, y, penalty: PenaltySpec, config: SolverConfig | None = None,
            init=None, initial_fit: FitResult | None = None) -> FitResult:
    """L-step local linear approximation for SCAD or MCP.

    Step 0 solves the lasso with uniform weights ``lam`` (warm-started from
    ``init``); each later step reweights by ``p'_lambda(|beta|)`` of the
    previous step and restarts from its state. A precomputed step-0 fit can be
    handed in through ``initial_fit`` to share it with a lasso path.
    """
    if not penalty.concave:
        raise ConfigurationError("lla_fit needs a SCAD or MCP penalty")
    prev = initial_fit if initial_fit is not None else fit(
        design, y, penalty.lasso(), config, init)
    total_iter = prev.n_iter
    converged = prev.converged
    wall = prev.wall_time
    for _ in range(int(penalty.lla_steps)):
        w = lla_weights(penalty, prev.beta_std, design.intercept_index)
        prev = fit(design, y, penalty.lasso(w), config, prev.state)
        total_iter += prev.n_iter
        converged = converged and prev.converged
        wall += prev.wall_time
    return replace(
        prev, family=penalty.family, lam=penalty.lam, n_iter=total_iter,
        converged=converged, wall_time=wall, lla_steps=int(penalty.lla_steps),
    )
