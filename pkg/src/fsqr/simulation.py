"""Synthetic sparse and dense designs and replicate studies with selection, estimation and coverage metrics."""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtr, ndtri

from .design import partition, standardize
from .errors import ConfigurationError, FSQRError
from .path import PathConfig, path_fit_families
from .penalties import PenaltySpec
from .prediction import QuantilePair, coverage
from .solver import SolverConfig, pinball

# 1-based feature indices of the strong signals; the last one is p itself
SPARSE_SIGNALS = (6, 20, 50, 100, 500, 1000)
SCALED_SIGNALS = (6, 20, 50)
NOISE_FEATURE = 1


def replicate_rng(seed, replicate, stream=0):
    """Independent generator for ``(seed, replicate, stream)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replicate), int(stream)]))


def ar1_matrix(rng, n, p, rho):
    """Rows drawn from N(0, Sigma) with ``Sigma_ij = rho^|i-j|`` by the AR(1) recursion."""
    xi = rng.standard_normal((n, p))
    c = math.sqrt(1.0 - rho * rho)
    xi[:, 0] /= c  # stationary start: x_1 = xi_1
    return lfilter([c], [1.0, -rho], xi, axis=1)


def with_intercept(X):
    n = X.shape[0]
    out = np.empty((n, X.shape[1] + 1), order="F")
    out[:, 0] = 1.0
    out[:, 1:] = X
    return out


@dataclass
class SparseDGPConfig:
    """Heteroscedastic sparse model with seven strong signals and a noise-scaling feature.

    For ``p > 1000`` the signal set (1-based) is {6, 20, 50, 100, 500, 1000, p}.
    Smaller designs switch to the scaled set {6, 20, 50, p // 2, p}, which
    needs ``p >= 102``.
    """

    n: int = 1000
    p: int = 2000
    rho: float = 0.5
    noise_scale: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError("n must be at least 2")
        if self.p < 102:
            raise ConfigurationError("the sparse design needs p >= 102")
        if not -1.0 < self.rho < 1.0:
            raise ConfigurationError("rho must lie in (-1, 1)")
        if self.noise_scale < 0:
            raise ConfigurationError("noise_scale must be nonnegative")

    @property
    def scaled(self) -> bool:
        return self.p <= SPARSE_SIGNALS[-1]

    @property
    def signals(self):
        """1-based feature indices of the strong signals and their signs."""
        idx = (SCALED_SIGNALS + (self.p // 2,) if self.scaled else SPARSE_SIGNALS) + (self.p,)
        signs = tuple(1.0 if k % 2 == 0 else -1.0 for k in range(len(idx)))
        return idx, signs


@dataclass
class DenseDGPConfig:
    """Many weak random effects plus heteroscedastic noise driven by ``m2`` columns."""

    n: int = 2000
    p: int = 4000
    m1: int = 500
    m2: int = 50
    sigma1_sq: float = 0.3
    sigma2_sq: float = 0.1
    rho: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise ConfigurationError("n must be at least 2 and p positive")
        if self.m1 < 0 or self.m2 < 0 or self.m1 + self.m2 > self.p:
            raise ConfigurationError("need m1, m2 >= 0 and m1 + m2 <= p")
        if self.sigma1_sq < 0 or self.sigma2_sq < 0:
            raise ConfigurationError("variances must be nonnegative")
        if not -1.0 < self.rho < 1.0:
            raise ConfigurationError("rho must lie in (-1, 1)")


@dataclass
class SparseData:
    X: np.ndarray
    y: np.ndarray
    config: SparseDGPConfig

    def beta_star(self, tau):
        """True conditional tau-quantile coefficients, intercept at index 0."""
        cfg = self.config
        beta = np.zeros(cfg.p + 1)
        idx, signs = cfg.signals
        beta[list(idx)] = signs
        beta[NOISE_FEATURE] = cfg.noise_scale * float(ndtri(tau))
        return beta


def gen_sparse(cfg: SparseDGPConfig, replicate=0, n=None, stream=0) -> SparseData:
    """Draw ``(X, y)``; ``X`` carries the intercept in column 0.

    ``n`` overrides ``cfg.n`` (used for test sets, drawn on another ``stream``).
    """
    n = cfg.n if n is None else int(n)
    rng = replicate_rng(cfg.seed, replicate, stream)
    Xt = ar1_matrix(rng, n, cfg.p, cfg.rho)
    Xt[:, 0] = ndtr(Xt[:, 0])
    eps = rng.standard_normal(n)
    idx, signs = cfg.signals
    y = Xt[:, [j - 1 for j in idx]] @ np.asarray(signs) + cfg.noise_scale * Xt[:, 0] * eps
    return SparseData(with_intercept(Xt), y, cfg)


@dataclass
class DenseData:
    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    b: np.ndarray
    config: DenseDGPConfig

    def quantile(self, X, tau):
        """True conditional quantile at rows of ``X`` (intercept column included)."""
        m1, m2 = self.config.m1, self.config.m2
        X = np.asarray(X, dtype=float)
        mean = X[:, 1:m1 + 1] @ self.a
        scale = X[:, m1 + 1:m1 + m2 + 1] @ np.abs(self.b)
        return mean + scale * float(ndtri(tau))


class DenseDGP:
    """Random coefficients drawn once per replicate, shared by train, validation and test draws."""

    def __init__(self, cfg: DenseDGPConfig, replicate=0):
        self.config = cfg
        self.replicate = replicate
        rng = replicate_rng(cfg.seed, replicate, 99)
        self.a = rng.normal(0.0, math.sqrt(cfg.sigma1_sq / cfg.m1), cfg.m1) if cfg.m1 else np.zeros(0)
        self.b = rng.normal(0.0, math.sqrt(cfg.sigma2_sq / cfg.m2), cfg.m2) if cfg.m2 else np.zeros(0)

    def sample(self, n=None, stream=0) -> DenseData:
        cfg = self.config
        n = cfg.n if n is None else int(n)
        rng = replicate_rng(cfg.seed, self.replicate, stream)
        Xt = ar1_matrix(rng, n, cfg.p, cfg.rho)
        m1, m2 = cfg.m1, cfg.m2
        Xt[:, m1:m1 + m2] = ndtr(Xt[:, m1:m1 + m2])
        eps = rng.standard_normal(n)
        y = Xt[:, :m1] @ self.a + (Xt[:, m1:m1 + m2] @ np.abs(self.b)) * eps
        return DenseData(with_intercept(Xt), y, self.a, self.b, cfg)


def gen_dense(cfg: DenseDGPConfig, replicate=0, n=None, stream=0) -> DenseData:
    return DenseDGP(cfg, replicate).sample(n, stream)


@dataclass
class ReplicateMetrics:
    """One (replicate, family, tau) outcome.

    ``ae`` sums absolute coefficient errors over the features (intercept
    excluded); ``p1`` flags that every strong signal was selected and ``p2``
    that the noise-scaling feature was. Sparse-only fields are NaN for dense
    studies.
    """

    replicate: int
    family: str
    tau: float
    ae: float = math.nan
    p1: float = math.nan
    p2: float = math.nan
    size: int = 0
    time: float = 0.0
    converged: bool = True
    lam: float = math.nan
    val_loss: float = math.nan
    test_loss: float = math.nan
    error: str = ""


@dataclass
class CoverageRow:
    replicate: int
    family: str
    coverage: float
    lower_tail: float
    upper_tail: float
    crossing: int
    n_test: int


def estimation_metrics(data: SparseData, coef, tau):
    """AE, P1, P2 and size for original-scale ``coef`` (intercept at 0)."""
    bstar = data.beta_star(tau)
    ae = float(np.sum(np.abs(coef[1:] - bstar[1:])))
    idx, _ = data.config.signals
    active = coef != 0
    p1 = float(all(active[j] for j in idx))
    p2 = float(active[NOISE_FEATURE])
    size = int(np.count_nonzero(coef[1:]))
    return ae, p1, p2, size


@dataclass
class StudySpec:
    """Replicate study: data model, methods, tuning and solver settings.

    ``dgp`` is "sparse" or "dense". Sparse studies select by HBIC and dense
    ones by validation loss unless ``selection_rule`` says otherwise. Test
    (and, for dense studies, validation) sets have ``test_ratio * n`` rows.
    """

    dgp: str = "sparse"
    n: int = 1000
    p: int = 2000
    replicates: int = 20
    seed: int = 0
    families: tuple = ("lasso",)
    taus: tuple = (0.5,)
    coverage_taus: tuple | None = None
    G: int = 5
    T: int = 50
    selection_rule: str | None = None
    pivotal_sims: int = 1000
    patience: int | None = None
    mu: float | None = None
    tol_primal: float = 1e-5
    tol_change: float = 1e-6
    max_iter: int = 20000
    test_ratio: float = 0.5
    lla_steps: int = 1
    rho: float = 0.5
    m1: int = 500
    m2: int = 50
    sigma1_sq: float = 0.3
    sigma2_sq: float = 0.1
    workers: int = 1

    def __post_init__(self):
        self.dgp = str(self.dgp).lower()
        if self.dgp not in ("sparse", "dense"):
            raise ConfigurationError(f"unknown dgp {self.dgp!r}")
        if self.replicates < 0:
            raise ConfigurationError("replicates must be nonnegative")
        self.families = tuple(PenaltySpec(f).family for f in self.families)
        self.taus = tuple(float(t) for t in self.taus)
        for t in self.taus:
            PenaltySpec("lasso", t)
        if self.coverage_taus is not None:
            lo, hi = (float(t) for t in self.coverage_taus)
            if not 0 < lo < hi < 1:
                raise ConfigurationError("coverage taus must satisfy 0 < lo < hi < 1")
            self.coverage_taus = (lo, hi)
        if self.G < 1:
            raise ConfigurationError("G must be positive")
        if not self.test_ratio > 0:
            raise ConfigurationError("test_ratio must be positive")
        if self.workers < 1:
            raise ConfigurationError("workers must be positive")
        self.dgp_config()
        self.path_config(0.5)
        self.solver_config()

    @property
    def rule(self):
        if self.selection_rule is not None:
            return self.selection_rule
        return "hbic" if self.dgp == "sparse" else "val"

    def dgp_config(self):
        if self.dgp == "sparse":
            return SparseDGPConfig(self.n, self.p, self.rho, seed=self.seed)
        return DenseDGPConfig(self.n, self.p, self.m1, self.m2, self.sigma1_sq,
                              self.sigma2_sq, self.rho, self.seed)

    def path_config(self, tau):
        return PathConfig(T=self.T, tau=tau, selection_rule=self.rule,
                          pivotal_sims=self.pivotal_sims, patience=self.patience)

    def solver_config(self):
        return SolverConfig(mu=self.mu, tol_primal=self.tol_primal, tol_change=self.tol_change,
                            max_iter=self.max_iter, record_trace=False)

    def all_taus(self):
        taus = list(self.taus)
        for t in self.coverage_taus or ():
            if t not in taus:
                taus.append(t)
        return taus

    def to_dict(self):
        return asdict(self)


@dataclass
class ReplicateOutcome:
    metrics: list = field(default_factory=list)
    coverage: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)


def run_replicate(spec: StudySpec, r: int, keep_fits=False) -> ReplicateOutcome:
    """Fit every (family, tau) path on replicate ``r``; failures become error rows."""
    out = ReplicateOutcome()
    n_test = max(1, int(round(spec.test_ratio * spec.n)))
    dense = spec.dgp == "dense"
    if dense:
        gen = DenseDGP(spec.dgp_config(), r)
        train, test = gen.sample(), gen.sample(n_test, stream=1)
        val = gen.sample(n_test, stream=2)
        validation = (val.X, val.y)
    else:
        cfg = spec.dgp_config()
        train, test = gen_sparse(cfg, r), gen_sparse(cfg, r, n=n_test, stream=1)
        validation = None
    design, _ = standardize(partition(train.X, spec.G, seed=spec.seed))
    scfg = spec.solver_config()
    selected = {}
    for tau in spec.all_taus():
        t0 = time.perf_counter()
        try:
            paths = path_fit_families(design, train.y, spec.families, spec.path_config(tau),
                                      validation, seed=spec.seed + r, solver_config=scfg,
                                      lla_steps=spec.lla_steps)
        except FSQRError as exc:
            for fam in spec.families:
                out.metrics.append(ReplicateMetrics(r, fam, tau, error=str(exc)))
            continue
        elapsed = time.perf_counter() - t0
        for fam, res in paths.items():
            best = res.best
            selected[(fam, tau)] = best
            m = ReplicateMetrics(r, fam, tau, size=best.size, converged=best.converged,
                                 lam=float(res.lambdas[res.selected]), time=elapsed)
            if not dense:
                m.ae, m.p1, m.p2, m.size = estimation_metrics(train, best.coef, tau)
            if res.val_loss is not None:
                m.val_loss = float(res.val_loss[res.selected])
            m.test_loss = float(np.mean(pinball(test.y - best.predict(test.X), tau)))
            if tau in spec.taus:
                out.metrics.append(m)
    if spec.coverage_taus is not None:
        lo, hi = spec.coverage_taus
        for fam in spec.families:
            if (fam, lo) in selected and (fam, hi) in selected:
                pair = QuantilePair.from_fits(selected[(fam, lo)], selected[(fam, hi)])
                rep = coverage(pair, test.X, test.y)
                out.coverage.append(CoverageRow(r, fam, rep.coverage, rep.lower_tail,
                                                rep.upper_tail, rep.crossing_count, rep.n_test))
    if keep_fits:
        out.fits = selected
    return out


@dataclass
class StudyResult:
    spec: StudySpec
    metrics: list
    coverage: list

    def table(self):
        """Mean and sd of each metric per (family, tau), in first-seen order."""
        groups = {}
        for m in self.metrics:
            groups.setdefault((m.family, m.tau), []).append(m)
        rows = []
        for (fam, tau), ms in groups.items():
            ok = [m for m in ms if not m.error]
            row = {"algorithm": fam, "tau": tau, "replicates": len(ms), "failures": len(ms) - len(ok),
                   "nonconverged": sum(not m.converged for m in ok)}
            for name, attr in (("AE", "ae"), ("P1", "p1"), ("P2", "p2"), ("Size", "size"),
                               ("Time", "time"), ("ValLoss", "val_loss"), ("TestLoss", "test_loss")):
                vals = np.array([getattr(m, attr) for m in ok], dtype=float)
                vals = vals[~np.isnan(vals)]
                row[name] = float(vals.mean()) if vals.size else math.nan
                row[name + "_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else math.nan
            rows.append(row)
        return rows

    def coverage_table(self):
        groups = {}
        for c in self.coverage:
            groups.setdefault(c.family, []).append(c)
        rows = []
        for fam, cs in groups.items():
            row = {"algorithm": fam, "replicates": len(cs)}
            for name in ("coverage", "lower_tail", "upper_tail"):
                vals = np.array([getattr(c, name) for c in cs])
                row[name + "_median"] = float(np.median(vals))
                row[name + "_mean"] = float(vals.mean())
            row["crossing_total"] = int(sum(c.crossing for c in cs))
            rows.append(row)
        return rows

    def write_csv(self, path):
        """Tidy per-(algorithm, tau) table; coverage columns are appended when present."""
        rows = self.table()
        cov = {r["algorithm"]: r for r in self.coverage_table()}
        cols = ["algorithm", "tau", "AE", "AE_sd", "P1", "P1_sd", "P2", "P2_sd", "Size", "Size_sd",
                "Time", "Time_sd", "ValLoss", "TestLoss", "replicates", "failures", "nonconverged"]
        cov_cols = ["coverage_median", "lower_tail_median", "upper_tail_median", "crossing_total"]
        if cov:
            cols += cov_cols
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in rows:
                extra = cov.get(row["algorithm"], {})
                w.writerow([row.get(c, extra.get(c, "")) for c in cols])

    def write_replicates_csv(self, path):
        names = list(ReplicateMetrics.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for m in self.metrics:
                w.writerow([getattr(m, k) for k in names])

    def write_coverage_csv(self, path):
        names = list(CoverageRow.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for c in self.coverage:
                w.writerow([getattr(c, k) for k in names])


def _run_one(args):
    spec, r = args
    return run_replicate(spec, r)


def run_study(spec: StudySpec, progress=None) -> StudyResult:
    """Run ``spec.replicates`` independent replicates (in a process pool when ``workers > 1``)."""
    reps = range(spec.replicates)
    if spec.workers > 1 and spec.replicates > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            outcomes = list(pool.map(_run_one, [(spec, r) for r in reps]))
    else:
        outcomes = []
        for r in reps:
            outcomes.append(run_replicate(spec, r))
            if progress is not None:
                progress(r, outcomes[-1])
    metrics = [m for o in outcomes for m in o.metrics]
    cov = [c for o in outcomes for c in o.coverage]
    return StudyResult(spec, metrics, cov)
