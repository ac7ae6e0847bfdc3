"""Quantile predictions, two-sided intervals and coverage accounting."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .solver import pinball


def predict_quantile(X, beta):
    """Linear predictor ``X @ beta``; ``X`` includes the intercept column.

    A single row (1-d ``X``) yields a scalar.
    """
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or X.shape[-1] != beta.shape[0]:
        raise DataError(f"design with {X.shape[-1]} columns does not match {beta.shape[0]} coefficients")
    out = X @ beta
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuantilePair:
    """Lower and upper quantile models on the original scale."""

    tau_lo: float
    beta_lo: np.ndarray
    tau_hi: float
    beta_hi: np.ndarray

    def __post_init__(self):
        if not 0 < self.tau_lo < self.tau_hi < 1:
            raise ConfigurationError(f"need 0 < tau_lo < tau_hi < 1, got {self.tau_lo}, {self.tau_hi}")
        lo = np.asarray(self.beta_lo, dtype=float)
        hi = np.asarray(self.beta_hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DataError("the two models have different coefficient shapes")
        object.__setattr__(self, "beta_lo", lo)
        object.__setattr__(self, "beta_hi", hi)

    @classmethod
    def from_fits(cls, lo, hi):
        return cls(lo.tau, lo.coef, hi.tau, hi.coef)

    def band(self, X):
        return predict_quantile(X, self.beta_lo), predict_quantile(X, self.beta_hi)


@dataclass
class CoverageReport:
    """Interval accounting over a test set.

    Crossed rows (lower bound above upper bound) count as coverage failures
    and are excluded from the two tail rates, whose denominator is the number
    of non-crossed rows. ``covered + below + above + crossing_count == n_test``.
    """

    coverage: float
    lower_tail: float
    upper_tail: float
    crossing_count: int
    n_test: int
    covered: int
    below: int
    above: int
    pinball_lo: float
    pinball_hi: float
    tau_lo: float
    tau_hi: float

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @staticmethod
    def csv_header():
        return ",".join(CoverageReport.__dataclass_fields__)

    def csv_line(self):
        return ",".join(repr(v) for v in asdict(self).values())


def coverage(pair: QuantilePair, X_test, y_test) -> CoverageReport:
    y = np.asarray(y_test, dtype=float).ravel()
    X = np.asarray(X_test, dtype=float)
    if y.size == 0:
        raise DataError("empty test set")
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError(f"test design of shape {X.shape} does not match {y.size} responses")
    lo, hi = pair.band(X)
    crossed = lo > hi
    ok = ~crossed
    below = int(np.count_nonzero(ok & (y < lo)))
    above = int(np.count_nonzero(ok & (y > hi)))
    covered = int(np.count_nonzero(ok & (y >= lo) & (y <= hi)))
    n_cross = int(np.count_nonzero(crossed))
    n = y.size
    n_ok = n - n_cross
    return CoverageReport(
        coverage=covered / n,
        lower_tail=below / n_ok if n_ok else 0.0,
        upper_tail=above / n_ok if n_ok else 0.0,
        crossing_count=n_cross,
        n_test=n,
        covered=covered,
        below=below,
        above=above,
        pinball_lo=float(np.mean(pinball(y - lo, pair.tau_lo))),
        pinball_hi=float(np.mean(pinball(y - hi, pair.tau_hi))),
        tau_lo=pair.tau_lo,
        tau_hi=pair.tau_hi,
    )
