"""scikit-learn style estimators wrapping the solver and the path driver."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .design import partition, standardize
from .path import PathConfig, path_fit
from .penalties import PenaltySpec, lla_fit
from .solver import SolverConfig, fit, pinball


def _design(X, n_blocks, seed):
    Xi = np.empty((X.shape[0], X.shape[1] + 1), order="F")
    Xi[:, 0] = 1.0
    Xi[:, 1:] = X
    G = min(int(n_blocks), Xi.shape[1])
    design, _ = standardize(partition(Xi, G, seed=seed))
    return design


class _QuantileBase(RegressorMixin, BaseEstimator):
    def _solver_config(self):
        return SolverConfig(mu=self.mu, tol_primal=self.tol_primal, tol_change=self.tol_change,
                            max_iter=self.max_iter, n_workers=self.n_workers, record_trace=False)

    def _set_from_fit(self, result):
        self.result_ = result
        self.coef_ = result.feature_coef
        self.intercept_ = result.intercept
        self.n_iter_ = result.n_iter
        self.converged_ = result.converged

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_

    def score(self, X, y, sample_weight=None):
        """Negative mean pinball loss at ``tau`` (higher is better)."""
        u = np.asarray(y, dtype=float) - self.predict(X)
        loss = pinball(u, self.tau)
        return -float(np.average(loss, weights=sample_weight))


class FSQuantileRegressor(_QuantileBase):
    """Penalized quantile regression at a single penalty level.

    Parameters
    ----------
    tau : float
        Quantile level in (0, 1).
    penalty : {"lasso", "scad", "mcp"}
    lam : float
        Penalty level on the standardized scale.
    a : float, optional
        Concavity parameter (3.7 for SCAD, 3 for MCP when omitted).
    lla_steps : int
        Number of reweighting steps for SCAD and MCP.
    n_blocks : int
        Number of column blocks; capped at the number of columns.
    mu, tol_primal, tol_change, max_iter, n_workers
        Solver controls, see ``SolverConfig``.
    seed : int
        Seed of the power-method start vectors.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    result_ : FitResult
    converged_ : bool
    """

    def __init__(self, tau=0.5, penalty="lasso", lam=0.05, a=None, lla_steps=1, n_blocks=5,
                 mu=None, tol_primal=1e-5, tol_change=1e-6, max_iter=20000, n_workers=1, seed=0):
        self.tau = tau
        self.penalty = penalty
        self.lam = lam
        self.a = a
        self.lla_steps = lla_steps
        self.n_blocks = n_blocks
        self.mu = mu
        self.tol_primal = tol_primal
        self.tol_change = tol_change
        self.max_iter = max_iter
        self.n_workers = n_workers
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        spec = PenaltySpec(self.penalty, self.tau, self.lam, a=self.a, lla_steps=self.lla_steps)
        design = _design(X, self.n_blocks, self.seed)
        if spec.concave:
            result = lla_fit(design, y, spec, self._solver_config())
        else:
            result = fit(design, y, spec, self._solver_config())
        self._set_from_fit(result)
        return self


class FSQuantileRegressorPath(_QuantileBase):
    """Quantile regression tuned along a pivotal lambda grid.

    ``fit(X, y)`` selects by HBIC; ``fit(X, y, X_val=..., y_val=...)`` with
    ``selection="val"`` selects by held-out pinball loss.

    Attributes
    ----------
    lambdas_ : ndarray
    path_ : PathResult
    lambda_ : float
        Selected penalty level.
    """

    def __init__(self, tau=0.5, penalty="lasso", n_lambdas=50, selection="hbic", grid_ratio=0.01,
                 pivotal_sims=1000, pivotal_quantile=0.9, pivotal_scale=1.0, patience=None,
                 a=None, lla_steps=1, n_blocks=5, mu=None, tol_primal=1e-5, tol_change=1e-6,
                 max_iter=20000, n_workers=1, seed=0):
        self.tau = tau
        self.penalty = penalty
        self.n_lambdas = n_lambdas
        self.selection = selection
        self.grid_ratio = grid_ratio
        self.pivotal_sims = pivotal_sims
        self.pivotal_quantile = pivotal_quantile
        self.pivotal_scale = pivotal_scale
        self.patience = patience
        self.a = a
        self.lla_steps = lla_steps
        self.n_blocks = n_blocks
        self.mu = mu
        self.tol_primal = tol_primal
        self.tol_change = tol_change
        self.max_iter = max_iter
        self.n_workers = n_workers
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        validation = None
        if X_val is not None or y_val is not None:
            X_val, y_val = check_X_y(X_val, y_val, y_numeric=True)
            if X_val.shape[1] != X.shape[1]:
                raise ValueError("validation features do not match the training features")
            validation = (np.hstack([np.ones((X_val.shape[0], 1)), X_val]), y_val)
        cfg = PathConfig(T=self.n_lambdas, tau=self.tau, selection_rule=self.selection,
                         pivotal_sims=self.pivotal_sims, pivotal_quantile=self.pivotal_quantile,
                         pivotal_scale=self.pivotal_scale, grid_ratio=self.grid_ratio,
                         patience=self.patience)
        design = _design(X, self.n_blocks, self.seed)
        res = path_fit(design, y, self.penalty, cfg, validation, seed=self.seed,
                       solver_config=self._solver_config(), a=self.a, lla_steps=self.lla_steps)
        self.path_ = res
        self.lambdas_ = res.lambdas
        self.lambda_ = float(res.lambdas[res.selected])
        self._set_from_fit(res.best)
        return self
