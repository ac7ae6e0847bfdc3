"""Optimality certificates and slow reference solvers for small weighted-l1 problems.

The checks here share no code path with the splitting iteration: the
certificate reads the saddle-point conditions directly, the exact reference
solves a linear program, and the subgradient solver is a plain first-order
method.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import ConfigurationError, NumericalError

MAX_N = 200
MAX_P = 20


@dataclass
class KKTReport:
    """Violations of the saddle-point conditions.

    ``beta_stationarity[j]`` is the distance of ``(X^T theta)_j`` to the
    subdifferential of ``lambda_j |beta_j|``; ``z_stationarity[i]`` is the
    distance of ``n * theta_i`` to the subdifferential of ``rho_tau`` at
    ``z_i``, i.e. the dual condition measured on the loss scale.
    """

    primal_residual: float
    beta_stationarity: np.ndarray
    z_stationarity: np.ndarray

    @property
    def max_violation(self) -> float:
        return float(max(self.primal_residual,
                         np.max(self.beta_stationarity, initial=0.0),
                         np.max(self.z_stationarity, initial=0.0)))

    def ok(self, tol) -> bool:
        return self.max_violation <= tol


def _matrix(design):
    return np.asarray(getattr(design, "data", design), dtype=float)


def _weights(design, penalty, p_total):
    if getattr(penalty, "family", "lasso") != "lasso":
        raise ConfigurationError("certificates cover the weighted-l1 (lasso) problem only")
    idx = getattr(design, "intercept_index", 0)
    if hasattr(penalty, "weight_vector"):
        return penalty.weight_vector(p_total, idx)
    w = np.asarray(penalty, dtype=float)
    if w.shape != (p_total,):
        raise ConfigurationError("weight vector does not match the design")
    return w


def kkt_check(design, y, beta, z, theta, penalty, tau=None, zero_tol=0.0) -> KKTReport:
    """Certificate for ``min (1/n) sum rho_tau(z) + sum lambda_j |beta_j|`` s.t. ``z = y - X beta``.

    Coefficients and residuals with magnitude at most ``zero_tol`` are read
    as zero when picking the subdifferential branch.
    """
    X = _matrix(design)
    n, P = X.shape
    tau = penalty.tau if tau is None else tau
    w = _weights(design, penalty, P)
    y, beta, z, theta = (np.asarray(a, dtype=float) for a in (y, beta, z, theta))
    primal = float(np.max(np.abs(y - X @ beta - z))) if n else 0.0

    g = X.T @ theta
    pos, neg = beta > zero_tol, beta < -zero_tol
    bviol = np.maximum(np.abs(g) - w, 0.0)
    bviol = np.where(pos, np.abs(g - w), bviol)
    bviol = np.where(neg, np.abs(g + w), bviol)

    t = n * theta
    zpos, zneg = z > zero_tol, z < -zero_tol
    zviol = np.maximum(np.maximum(t - tau, (tau - 1.0) - t), 0.0)
    zviol = np.where(zpos, np.abs(t - tau), zviol)
    zviol = np.where(zneg, np.abs(t - (tau - 1.0)), zviol)
    return KKTReport(primal, bviol, zviol)


def _check_size(X):
    n, P = X.shape
    if n > MAX_N or P - 1 > MAX_P:
        raise ConfigurationError(
            f"reference solvers accept n <= {MAX_N} and p <= {MAX_P}, got n={n}, p={P - 1}")


def _objective(X, y, beta, w, tau):
    u = y - X @ beta
    return float(np.mean(u * (tau - (u < 0))) + np.sum(w * np.abs(beta)))


@dataclass
class ReferenceSolution:
    beta: np.ndarray
    objective: float
    z: np.ndarray
    theta: np.ndarray | None


def reference_solve(design, y, penalty, tau=None) -> ReferenceSolution:
    """Exact solution of the weighted-l1 problem as a linear program.

    Variables are ``beta = b+ - b-`` and ``y - X beta = u - v`` with all parts
    nonnegative. The equality multipliers are the dual vector ``theta``.
    """
    X = _matrix(design)
    _check_size(X)
    n, P = X.shape
    tau = penalty.tau if tau is None else tau
    w = _weights(design, penalty, P)
    y = np.asarray(y, dtype=float)
    c = np.concatenate([w, w, np.full(n, tau / n), np.full(n, (1.0 - tau) / n)])
    A = sparse.hstack([sparse.csr_matrix(X), sparse.csr_matrix(-X),
                       sparse.identity(n), -sparse.identity(n)]).tocsr()
    res = linprog(c, A_eq=A, b_eq=y, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError(f"linear program failed: {res.message}")
    beta = res.x[:P] - res.x[P:2 * P]
    beta[np.abs(beta) < 1e-12] = 0.0
    theta = np.asarray(res.eqlin.marginals, dtype=float)
    return ReferenceSolution(beta, _objective(X, y, beta, w, tau), y - X @ beta, theta)


def subgradient_solve(design, y, penalty, tau=None, max_iter=200_000, step0=None,
                      init=None) -> ReferenceSolution:
    """Subgradient descent with ``step0 / sqrt(k)`` steps; returns the best iterate seen.

    Slow and only accurate to a few digits; used as a second, structurally
    unrelated opinion on small instances.
    """
    X = _matrix(design)
    _check_size(X)
    n, P = X.shape
    tau = penalty.tau if tau is None else tau
    w = _weights(design, penalty, P)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(P) if init is None else np.array(init, dtype=float)
    if step0 is None:
        step0 = 1.0 / max(np.linalg.norm(X, 2) ** 2 / n, 1e-12)
    best = beta.copy()
    best_obj = _objective(X, y, beta, w, tau)
    for k in range(1, int(max_iter) + 1):
        u = y - X @ beta
        gl = -(X.T @ (tau - (u < 0))) / n
        g = gl + w * np.sign(beta)
        beta = beta - (step0 / np.sqrt(k)) * g
        obj = _objective(X, y, beta, w, tau)
        if obj < best_obj:
            best_obj, best = obj, beta.copy()
    return ReferenceSolution(best, best_obj, y - X @ best, None)
