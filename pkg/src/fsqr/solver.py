"""Feature-splitting proximal point iteration for weighted-l1 quantile regression.

One iteration updates every coefficient block from the current dual vector
(blocks are independent and may run on separate workers), then the working
residual ``z`` and finally the dual vector ``theta``. With ``r = X beta + z - y``
the dual step is ``theta - mu / (G + 1) * (2 r_new - r_old)``.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .design import BlockedDesign, _block_product, block_matvec
from .errors import ConfigurationError, DataError, NumericalError

# default augmented parameter is MU_SCALE / n; the loss carries a 1/n factor, so the
# dual variable lives on a 1/n scale and mu has to follow it
MU_SCALE = 5.0


def pinball(u, tau):
    """Check loss ``(tau - 1{u < 0}) * u``, elementwise."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


@dataclass
class SolverConfig:
    """Iteration controls.

    ``mu=None`` resolves to ``MU_SCALE / n`` at fit time. The stopping rule
    fires when ``max|y - X beta - z| <= tol_primal`` and the largest absolute
    change of ``beta``, ``z`` and ``theta`` in the last iteration is at most
    ``tol_change``.
    """

    mu: float | None = None
    eta_safety: float = 1.05
    tol_primal: float = 1e-5
    tol_change: float = 1e-6
    max_iter: int = 20000
    n_workers: int = 1
    record_trace: bool = True

    def __post_init__(self):
        if self.mu is not None and not self.mu > 0:
            raise ConfigurationError(f"mu must be positive, got {self.mu}")
        if not self.eta_safety > 1.0:
            raise ConfigurationError("eta_safety must exceed 1 so that eta_g > mu * Lambda_max")
        if self.tol_primal < 0 or self.tol_change < 0:
            raise ConfigurationError("tolerances must be nonnegative")
        if int(self.max_iter) < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if int(self.n_workers) < 1:
            raise ConfigurationError("n_workers must be at least 1")

    def resolve_mu(self, n) -> float:
        return float(self.mu) if self.mu is not None else MU_SCALE / n


@dataclass
class SolverState:
    """Primal/dual iterate plus cached block products and residual."""

    beta: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    xbeta_blocks: list = field(default_factory=list)
    residual: np.ndarray | None = None
    iter: int = 0

    def copy(self) -> "SolverState":
        return SolverState(
            self.beta.copy(), self.z.copy(), self.theta.copy(),
            [b.copy() for b in self.xbeta_blocks],
            None if self.residual is None else self.residual.copy(), self.iter,
        )

    @property
    def xbeta(self):
        total = np.zeros_like(self.z)
        for part in self.xbeta_blocks:
            total += part
        return total

    def vector(self):
        """Stacked ``(beta, z, theta)``."""
        return np.concatenate([self.beta, self.z, self.theta])


@dataclass
class ConvergenceTrace:
    primal_residual: list = field(default_factory=list)
    change: list = field(default_factory=list)
    objective: list = field(default_factory=list)

    def __len__(self):
        return len(self.primal_residual)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,primal_residual,change,objective\n")
            for k, (r, c, o) in enumerate(
                zip(self.primal_residual, self.change, self.objective), start=1
            ):
                fh.write(f"{k},{r!r},{c!r},{o!r}\n")


@dataclass
class FitResult:
    """Outcome of one penalized fit.

    ``coef`` is on the original scale with the intercept at
    ``intercept_index``; ``beta_std`` is the standardized-scale solution the
    iteration produced. ``active`` lists design columns (intercept excluded)
    with exactly nonzero coefficients.
    """

    beta_std: np.ndarray
    coef: np.ndarray
    intercept_index: int
    tau: float
    lam: float | None
    family: str
    weights: np.ndarray
    n_iter: int
    converged: bool
    objective: float
    loss: float
    penalty_value: float
    wall_time: float
    state: SolverState
    trace: ConvergenceTrace | None = None
    lla_steps: int = 0

    @property
    def intercept(self) -> float:
        return float(self.coef[self.intercept_index])

    @property
    def feature_coef(self):
        """Original-scale coefficients with the intercept removed."""
        return np.delete(self.coef, self.intercept_index)

    @property
    def active(self):
        idx = np.flatnonzero(self.beta_std)
        return idx[idx != self.intercept_index]

    @property
    def size(self) -> int:
        return int(self.active.size)

    def predict(self, X):
        """Linear predictor for rows of a design that includes the intercept column."""
        return np.asarray(X, dtype=float) @ self.coef

    def to_dict(self, include_timing=True):
        feat = self.feature_coef
        nz = np.flatnonzero(feat)
        out = {
            "family": self.family,
            "tau": self.tau,
            "lambda": self.lam,
            "n_features": int(feat.size),
            "intercept": self.intercept,
            "coefficients": {str(int(j)): float(feat[j]) for j in nz},
            "iterations": int(self.n_iter),
            "converged": bool(self.converged),
            "objective": float(self.objective),
            "lla_steps": int(self.lla_steps),
        }
        if include_timing:
            out["wall_time"] = float(self.wall_time)
        return out


def prox_beta_block(beta_g, rmat_g, lambda_g, eta_g):
    """Closed-form block update: soft-thresholding of ``eta*beta + X_g^T theta``.

    Coordinates with ``|eta*beta_j + (X_g^T theta)_j| <= lambda_j`` come out as
    exact zeros.
    """
    if not eta_g > 0:
        raise ConfigurationError(f"eta must be positive, got {eta_g}")
    v = eta_g * np.asarray(beta_g, dtype=float) + rmat_g
    return (np.maximum(v - lambda_g, 0.0) - np.maximum(-v - lambda_g, 0.0)) / eta_g


def prox_z(z, theta, mu, tau, n):
    """Proximal step of ``(1/n) sum rho_tau`` at ``z + theta / mu``."""
    if not mu > 0:
        raise ConfigurationError(f"mu must be positive, got {mu}")
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    v = np.asarray(z, dtype=float) + np.asarray(theta, dtype=float) / mu
    return np.maximum(v - tau / (n * mu), 0.0) - np.maximum(-v - (1.0 - tau) / (n * mu), 0.0)


def dual_update(theta, residual_next, residual_prev, mu, G):
    return theta - (mu / (G + 1)) * (2.0 * residual_next - residual_prev)


def _weights_of(penalty, design):
    if hasattr(penalty, "weight_vector"):
        return penalty.weight_vector(design.p_total, design.intercept_index)
    w = np.asarray(penalty, dtype=float)
    if w.shape != (design.p_total,):
        raise ConfigurationError(f"weight vector of shape {w.shape}, expected ({design.p_total},)")
    return w


def objective(design, y, beta, penalty, tau=None):
    """``(1/n) sum rho_tau(y - X beta) + sum_j lambda_j |beta_j|``.

    ``penalty`` is a penalty object (which supplies ``tau``) or a plain weight
    vector, in which case ``tau`` must be passed.
    """
    tau = penalty.tau if tau is None else tau
    w = _weights_of(penalty, design)
    beta = np.asarray(beta, dtype=float)
    res = np.asarray(y, dtype=float) - design.matvec(beta)
    return float(np.mean(pinball(res, tau)) + np.sum(w * np.abs(beta)))


def initial_state(design, y, init=None) -> SolverState:
    """Cold start ``beta = 0, z = y, theta = 0`` or a copy of ``init`` with fresh caches."""
    y = np.asarray(y, dtype=float)
    if init is None:
        beta = np.zeros(design.p_total)
        z = y.copy()
        theta = np.zeros(design.n)
    else:
        beta, z, theta = (np.array(a, dtype=float) for a in (init.beta, init.z, init.theta))
        if beta.shape != (design.p_total,) or z.shape != y.shape or theta.shape != y.shape:
            raise ConfigurationError("warm-start state does not conform to the problem")
    parts, total = block_matvec(design, beta)
    return SolverState(beta, z, theta, parts, total + z - y, 0)


def fit(design: BlockedDesign, y, penalty, config: SolverConfig | None = None,
        init: SolverState | None = None, callback=None) -> FitResult:
    """Run the iteration to the stopping rule or ``max_iter``.

    Parameters
    ----------
    design : BlockedDesign
        Usually standardized; coefficients are mapped back with its statistics.
    y : array of shape (n,)
    penalty : PenaltySpec or ndarray
        Supplies the per-column weights (intercept weight must be 0) and ``tau``.
    config : SolverConfig, optional
    init : SolverState, optional
        Warm start; a cold start is used when absent.
    callback : callable, optional
        Called with the new ``SolverState`` after every iteration.

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iter`` was reached.
    """
    config = config or SolverConfig()
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise DataError(f"response of shape {y.shape}, expected ({design.n},)")
    if not np.all(np.isfinite(y)):
        raise DataError("response contains non-finite values")
    tau = float(penalty.tau)
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    weights = _weights_of(penalty, design)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ConfigurationError("penalty weights must be finite and nonnegative")
    if weights[design.intercept_index] != 0:
        raise ConfigurationError("the intercept must carry weight 0")

    n, G = design.n, design.n_blocks
    mu = config.resolve_mu(n)
    etas = config.eta_safety * mu * design.lambda_max_eigs
    blocks = design.blocks
    slices = [design.block_slice(g) for g in range(G)]
    wblocks = [weights[s] for s in slices]

    state = initial_state(design, y, init)
    beta, z, theta, r = state.beta, state.z, state.theta, state.residual
    trace = ConvergenceTrace() if config.record_trace else None
    step = mu / (G + 1)
    ztop, zbot = tau / (n * mu), (1.0 - tau) / (n * mu)

    def update_block(g):
        s = slices[g]
        nb = prox_beta_block(beta[s], blocks[g].T @ theta, wblocks[g], etas[g])
        return nb, _block_product(blocks[g], nb)

    pool = ThreadPoolExecutor(config.n_workers) if config.n_workers > 1 and G > 1 else None
    converged = False
    k = 0
    t0 = time.perf_counter()
    try:
        for k in range(1, int(config.max_iter) + 1):
            if pool is None:
                results = [update_block(g) for g in range(G)]
            else:
                results = list(pool.map(update_block, range(G)))
            new_beta = np.concatenate([res[0] for res in results])
            xparts = [res[1] for res in results]
            xb = np.zeros(n)
            for part in xparts:  # fixed block order keeps sums worker-count invariant
                xb += part
            v = z + theta / mu
            new_z = np.maximum(v - ztop, 0.0) - np.maximum(-v - zbot, 0.0)
            new_r = xb + new_z - y
            new_theta = dual_update(theta, new_r, r, mu, G)
            if not (np.isfinite(new_r.sum()) and np.isfinite(new_beta.sum())
                    and np.isfinite(new_theta.sum())):
                raise NumericalError(f"non-finite iterate at iteration {k}")
            change = max(
                float(np.max(np.abs(new_beta - beta))),
                float(np.max(np.abs(new_z - z))),
                float(np.max(np.abs(new_theta - theta))),
            )
            beta, z, theta, r = new_beta, new_z, new_theta, new_r
            if trace is not None:
                trace.primal_residual.append(float(np.linalg.norm(r)))
                trace.change.append(change)
                trace.objective.append(
                    float(np.mean(pinball(y - xb, tau)) + np.sum(weights * np.abs(beta))))
            if callback is not None:
                callback(SolverState(beta, z, theta, xparts, r, k))
            if np.max(np.abs(r)) <= config.tol_primal and change <= config.tol_change:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    wall = time.perf_counter() - t0

    final = SolverState(beta, z, theta, xparts if k else state.xbeta_blocks, r, k)
    xb_final = final.xbeta
    loss = float(np.mean(pinball(y - xb_final, tau)))
    pen = float(np.sum(weights * np.abs(beta)))
    smap = design.standardization
    return FitResult(
        beta_std=beta, coef=smap.to_original(beta), intercept_index=design.intercept_index,
        tau=tau, lam=getattr(penalty, "lam", None), family=getattr(penalty, "family", "lasso"),
        weights=weights, n_iter=k, converged=converged, objective=loss + pen, loss=loss,
        penalty_value=pen, wall_time=wall, state=final, trace=trace,
    )


def with_config(config: SolverConfig | None, **changes) -> SolverConfig:
    return replace(config or SolverConfig(), **changes)
