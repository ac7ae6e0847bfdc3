"""Column-blocked design matrices.

The design is held as one Fortran-ordered ``n x (p+1)`` array; block ``g`` is a
view onto a contiguous range of its columns, so per-block products never copy
data. Blocks are immutable once built and can be shared between workers.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DataError

BINARY_MAGIC = b"FSQR1"

# power-method defaults; the solver inflates the estimate by its own safety factor
POWER_TOL = 1e-4
POWER_MAX_ITER = 1000


class EigenEstimate(NamedTuple):
    value: float
    converged: bool
    n_iter: int
    residual: float = 0.0


@dataclass(frozen=True)
class StandardizationMap:
    """Column statistics needed to move coefficients between scales."""

    col_means: np.ndarray
    col_sds: np.ndarray
    intercept_index: int

    def to_original(self, beta_std):
        """Map standardized-scale coefficients (intercept included) to the raw scale."""
        beta_std = np.asarray(beta_std, dtype=float)
        beta = beta_std / self.col_sds
        mask = np.ones(beta.shape[0], dtype=bool)
        mask[self.intercept_index] = False
        beta[self.intercept_index] = beta_std[self.intercept_index] - np.dot(
            self.col_means[mask], beta[mask]
        )
        return beta

    def to_standardized(self, beta):
        beta = np.asarray(beta, dtype=float)
        beta_std = beta * self.col_sds
        mask = np.ones(beta.shape[0], dtype=bool)
        mask[self.intercept_index] = False
        beta_std[self.intercept_index] = beta[self.intercept_index] + np.dot(
            self.col_means[mask], beta[mask]
        )
        return beta_std

    @classmethod
    def identity(cls, p_total, intercept_index=0):
        return cls(np.zeros(p_total), np.ones(p_total), intercept_index)


@dataclass(frozen=True, eq=False)
class BlockedDesign:
    """Design matrix split column-wise into ``G`` contiguous blocks.

    Attributes
    ----------
    data : ndarray of shape (n, p_total)
        Fortran-ordered matrix; blocks are views of it.
    edges : ndarray of shape (G + 1,)
        Column boundaries; block ``g`` spans ``edges[g]:edges[g + 1]``.
    col_means, col_sds : ndarray
        Standardization statistics (zeros/ones for a raw design).
    intercept_index : int
        Column holding the all-ones intercept.
    seed : int
        Seed of the power-method start vectors.
    """

    data: np.ndarray
    edges: np.ndarray
    col_means: np.ndarray
    col_sds: np.ndarray
    intercept_index: int = 0
    seed: int = 0
    power_tol: float = POWER_TOL
    power_max_iter: int = POWER_MAX_ITER
    standardized: bool = False
    _eig_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p_total(self) -> int:
        return self.data.shape[1]

    @property
    def n_blocks(self) -> int:
        return len(self.edges) - 1

    @property
    def block_sizes(self):
        return np.diff(self.edges)

    @cached_property
    def blocks(self):
        return [self.data[:, a:b] for a, b in zip(self.edges[:-1], self.edges[1:])]

    def block_slice(self, g) -> slice:
        return slice(int(self.edges[g]), int(self.edges[g + 1]))

    def split(self, vec):
        """Split a length-``p_total`` vector conformally with the blocks."""
        vec = np.asarray(vec)
        if vec.shape != (self.p_total,):
            raise ConfigurationError(
                f"vector of shape {vec.shape} does not conform to {self.p_total} columns"
            )
        return [vec[self.block_slice(g)] for g in range(self.n_blocks)]

    @property
    def standardization(self) -> StandardizationMap:
        return StandardizationMap(self.col_means.copy(), self.col_sds.copy(), self.intercept_index)

    @property
    def eigen_estimates(self):
        if "est" not in self._eig_cache:
            rng = np.random.default_rng(self.seed)
            self._eig_cache["est"] = [
                top_eigenvalue(b, tol=self.power_tol, max_iter=self.power_max_iter, rng=rng)
                for b in self.blocks
            ]
        return self._eig_cache["est"]

    @property
    def lambda_max_eigs(self):
        """Per-block upper-bound-safe estimates of the top eigenvalue of X_g^T X_g.

        A block whose power iteration stopped at its cap reports ``rho + residual``
        instead of ``rho``, capped by the squared Frobenius norm, which always
        dominates the top eigenvalue.
        """
        out = []
        for est, blk in zip(self.eigen_estimates, self.blocks):
            if est.converged:
                out.append(est.value)
            else:
                out.append(min(est.value + est.residual, float(np.sum(blk * blk))))
        return np.array(out)

    def with_blocks(self, G) -> "BlockedDesign":
        """Same matrix and statistics, re-partitioned into ``G`` blocks."""
        return BlockedDesign(
            self.data, _split_edges(self.p_total, G), self.col_means, self.col_sds,
            self.intercept_index, self.seed, self.power_tol, self.power_max_iter,
            self.standardized,
        )

    def matvec(self, beta):
        return block_matvec(self, beta)[1]

    def rmatvec(self, theta):
        return np.concatenate(block_rmatvec(self, theta))


def _split_edges(p_total, G):
    if not isinstance(G, (int, np.integer)) or G < 1 or G > p_total:
        raise ConfigurationError(f"number of blocks must be in [1, {p_total}], got {G!r}")
    base, extra = divmod(p_total, G)
    sizes = [base + 1] * extra + [base] * (G - extra)
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def find_intercept(X) -> int | None:
    ones = np.all(X == 1.0, axis=0)
    idx = np.flatnonzero(ones)
    return int(idx[0]) if idx.size else None


def partition(raw, G, *, seed=0, power_tol=POWER_TOL, power_max_iter=POWER_MAX_ITER):
    """Split ``raw`` (which must hold an all-ones column) into ``G`` contiguous blocks.

    Block sizes differ by at most one, larger blocks first, so ``p+1 = 10`` with
    ``G = 3`` gives sizes ``(4, 3, 3)``.
    """
    X = np.asarray(raw, dtype=float)
    if X.ndim != 2:
        raise DataError(f"design must be two-dimensional, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("design contains non-finite entries")
    intercept = find_intercept(X)
    if intercept is None:
        raise DataError("design has no intercept column of ones")
    edges = _split_edges(X.shape[1], G)
    p_total = X.shape[1]
    return BlockedDesign(
        np.asfortranarray(X), edges, np.zeros(p_total), np.ones(p_total), intercept,
        seed, power_tol, power_max_iter,
    )


def standardize(design: BlockedDesign):
    """Center and scale every non-intercept column to mean 0 and sample sd 1."""
    X = design.data
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1) if design.n > 1 else np.zeros(design.p_total)
    means[design.intercept_index] = 0.0
    sds[design.intercept_index] = 1.0
    bad = np.flatnonzero(~(sds > 0))
    if bad.size:
        raise DataError(f"column {int(bad[0])} has zero variance")
    Xs = np.asfortranarray((X - means) / sds)
    Xs[:, design.intercept_index] = 1.0
    out = BlockedDesign(
        Xs, design.edges.copy(), means, sds, design.intercept_index, design.seed,
        design.power_tol, design.power_max_iter, True,
    )
    return out, out.standardization


def top_eigenvalue(block, tol=POWER_TOL, max_iter=POWER_MAX_ITER, rng=None) -> EigenEstimate:
    """Largest eigenvalue of ``block.T @ block`` by power iteration.

    Only products ``block @ v`` and ``block.T @ u`` are formed. Returns the
    Rayleigh quotient ``rho`` (never above the true value) and the residual
    ``||B v - rho v||`` of the unit iterate. Iteration stops once the residual
    is at most ``tol * rho``: then an eigenvalue lies within ``tol * rho`` of
    ``rho``, and once the iterate is dominated by the top eigenvector that
    eigenvalue is the largest one. A small relative change of ``rho`` alone is
    not trusted because it also happens on plateaus when the top eigenvalue
    is nearly degenerate.
    """
    A = np.asarray(block, dtype=float)
    if A.ndim != 2 or A.size == 0 or not np.any(A):
        raise DataError("power iteration needs a nonzero two-dimensional block")
    rng = np.random.default_rng(rng)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    rho, res = 0.0, np.inf
    for it in range(1, max_iter + 1):
        w = A.T @ (A @ v)
        rho = float(v @ w)
        res = float(np.linalg.norm(w - rho * v))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector fell in the null space; restart
            v = rng.standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            continue
        if res <= tol * rho:
            return EigenEstimate(rho, True, it, res)
        v = w / norm
    return EigenEstimate(rho, False, max_iter, res)


def block_matvec(design: BlockedDesign, beta):
    """Per-block products ``X_g beta_g`` and their sum accumulated in block order."""
    parts = [_block_product(blk, b) for blk, b in zip(design.blocks, design.split(beta))]
    total = np.zeros(design.n)
    for part in parts:
        total += part
    return parts, total


def _block_product(block, beta_g):
    nz = np.flatnonzero(beta_g)
    if nz.size == 0:
        return np.zeros(block.shape[0])
    if nz.size * 4 < beta_g.shape[0]:
        # sparse coefficient vector: touch only the active columns
        return block[:, nz] @ beta_g[nz]
    return block @ beta_g


def block_rmatvec(design: BlockedDesign, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (design.n,):
        raise ConfigurationError(f"dual vector of shape {theta.shape}, expected ({design.n},)")
    return [blk.T @ theta for blk in design.blocks]


# ---------------------------------------------------------------------------
# file formats


def read_csv_matrix(path):
    """Read a numeric CSV with a header row. Returns ``(matrix, column_names)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    try:
        M = np.array(rows, dtype=float).reshape(len(rows), len(header))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(M)):
        raise DataError(f"{path}: non-finite entries")
    return M, [h.strip() for h in header]


def write_csv_matrix(path, M, names=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    names = names or [f"x{j}" for j in range(M.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows([[repr(float(v)) for v in row] for row in M])


def read_binary_matrix(path):
    """Read the ``FSQR1`` format: magic, u64 n, u64 p_total, column-major float64."""
    raw = Path(path).read_bytes()
    if raw[:5] != BINARY_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:5]!r}")
    n, p = struct.unpack_from("<QQ", raw, 5)
    body = raw[21:]
    if len(body) != 8 * n * p:
        raise DataError(f"{path}: expected {n}x{p} doubles, found {len(body)} bytes")
    M = np.frombuffer(body, dtype="<f8").reshape((n, p), order="F").astype(float)
    if not np.all(np.isfinite(M)):
        raise DataError(f"{path}: non-finite entries")
    return M


def write_binary_matrix(path, M):
    M = np.asarray(M, dtype="<f8")
    n, p = M.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<QQ", n, p))
        fh.write(np.asfortranarray(M).tobytes(order="F"))


def load_matrix(path, add_intercept=True):
    """Load a CSV or ``FSQR1`` file and make sure an intercept column leads it.

    An existing all-ones column is moved to position 0; otherwise one is
    prepended when ``add_intercept`` is set. Returns ``(matrix, names)``.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(5)
    if head == BINARY_MAGIC:
        M = read_binary_matrix(path)
        names = [f"x{j}" for j in range(M.shape[1])]
    else:
        M, names = read_csv_matrix(path)
    return ensure_intercept(M, names, add_intercept)


def ensure_intercept(M, names: Sequence[str] | None = None, add_intercept=True):
    names = list(names) if names is not None else [f"x{j}" for j in range(M.shape[1])]
    idx = find_intercept(M)
    if idx is not None:
        order = [idx] + [j for j in range(M.shape[1]) if j != idx]
        return M[:, order], [names[j] for j in order]
    if not add_intercept:
        raise DataError("no intercept column and intercept synthesis disabled")
    return np.column_stack([np.ones(M.shape[0]), M]), ["(intercept)"] + names


def load_vector(path):
    """Load a response vector from a one-column CSV or ``FSQR1`` file."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(5)
    M = read_binary_matrix(path) if head == BINARY_MAGIC else read_csv_matrix(path)[0]
    if M.ndim != 2 or M.shape[1] != 1:
        raise DataError(f"{path}: expected a single column, got shape {M.shape}")
    return M[:, 0]
