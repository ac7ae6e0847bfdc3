import json
import math

import numpy as np
import pytest

from fsqr.design import partition, standardize
from fsqr.errors import ConfigurationError, DataError
from fsqr.path import (PathConfig, hbic, path_fit, path_fit_families, pivotal_lambda_grid,
                       pivotal_lambda_max)
from fsqr.simulation import SparseDGPConfig, gen_sparse
from fsqr.solver import SolverConfig, pinball

from conftest import make_problem

LOOSE = SolverConfig(tol_primal=1e-3, tol_change=1e-4, max_iter=3000)


def test_hbic_worked_example():
    assert hbic(100.0, 7, 1000, 2000) == pytest.approx(4.7080, abs=5e-5)


def test_hbic_empty_model_is_log_loss():
    assert hbic(37.5, 0, 50, 10) == math.log(37.5)


def test_hbic_monotone_in_size():
    assert hbic(20.0, 6, 300, 900) > hbic(20.0, 3, 300, 900)


def test_hbic_zero_loss_sentinel():
    assert hbic(0.0, 4, 100, 10) == -math.inf
    with pytest.raises(ConfigurationError):
        hbic(-1.0, 0, 100, 10)


@pytest.mark.parametrize("kwargs", [
    {"T": 0}, {"grid_ratio": 1.0}, {"grid_ratio": 0.0}, {"selection_rule": "aic"},
    {"tau": 1.0}, {"pivotal_sims": 0}, {"pivotal_quantile": 1.0}, {"pivotal_scale": 0.0},
    {"patience": 0},
])
def test_path_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        PathConfig(**kwargs)


def test_selection_rule_aliases():
    assert PathConfig(selection_rule="ValidationLoss").selection_rule == "val"
    assert PathConfig(selection_rule="HBIC").selection_rule == "hbic"


def test_grid_shape_and_ratio():
    _, _, d, _ = make_problem(n=60, p=10)
    cfg = PathConfig(T=12, pivotal_sims=200)
    grid = pivotal_lambda_grid(d, 0.5, cfg, seed=1)
    assert grid.shape == (12,)
    assert np.all(np.diff(grid) < 0)
    assert grid[-1] / grid[0] == pytest.approx(0.01, rel=1e-12)
    assert grid[0] == pivotal_lambda_max(d, 0.5, cfg, seed=1)


def test_grid_single_point():
    _, _, d, _ = make_problem()
    cfg = PathConfig(T=1, pivotal_sims=100)
    grid = pivotal_lambda_grid(d, 0.5, cfg)
    np.testing.assert_array_equal(grid, [pivotal_lambda_max(d, 0.5, cfg)])


def test_grid_is_seed_reproducible():
    _, _, d, _ = make_problem()
    cfg = PathConfig(T=5, pivotal_sims=300)
    np.testing.assert_array_equal(pivotal_lambda_grid(d, 0.3, cfg, 4),
                                  pivotal_lambda_grid(d, 0.3, cfg, 4))


def test_zero_column_does_not_contribute():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(50), rng.standard_normal((50, 3))])
    Xz = np.column_stack([X, np.zeros(50)])
    cfg = PathConfig(pivotal_sims=400)
    a = pivotal_lambda_max(partition(X, 1), 0.5, cfg, seed=3)
    b = pivotal_lambda_max(partition(Xz, 1), 0.5, cfg, seed=3)
    assert a == b


def test_all_zero_features_is_data_error():
    X = np.column_stack([np.ones(10), np.zeros((10, 2))])
    with pytest.raises(DataError):
        pivotal_lambda_max(partition(X, 1), 0.5)


def test_pivotal_quantile_against_monte_carlo():
    n, p = 100, 5
    rng = np.random.default_rng(2024)
    cols = np.tile([1.0, -1.0], n // 2)
    F = np.column_stack([rng.permutation(cols) for _ in range(p)])
    d = partition(np.column_stack([np.ones(n), F]), 1)
    # independent oracle: 1e5 sign draws through a different generator
    orng = np.random.Generator(np.random.MT19937(77))
    s = np.where(orng.uniform(size=(100_000, n)) <= 0.5, -0.5, 0.5)
    stats = np.max(np.abs(s @ F), axis=1) / n
    oracle = np.quantile(stats, 0.9)
    est = pivotal_lambda_max(d, 0.5, PathConfig(pivotal_sims=20_000), seed=5)
    # the statistic lives on a 0.01 lattice, so compare through the oracle CDF
    half_step = 0.005
    assert np.mean(stats <= est + half_step) >= 0.9 - 0.01
    assert np.mean(stats <= est - half_step) <= 0.9 + 0.01
    # sqrt(log p / n) scale
    assert 0.5 < oracle / math.sqrt(math.log(p) / n) < 2.0


def test_null_data_first_fit_is_near_null():
    rng = np.random.default_rng(8)
    n, p = 200, 50
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    y = rng.standard_normal(n)
    d, _ = standardize(partition(X, 2))
    res = path_fit(d, y, "lasso", PathConfig(T=3, pivotal_sims=1000), seed=1,
                   solver_config=SolverConfig(max_iter=20000))
    assert res.fits[0].size <= 1


def test_validation_rule_selects_argmin():
    X, y, d, _ = make_problem(n=80, p=12, seed=4)
    Xv, yv, _, _ = make_problem(n=60, p=12, seed=40)
    cfg = PathConfig(T=8, pivotal_sims=200, selection_rule="val")
    res = path_fit(d, y, "lasso", cfg, validation=(Xv, yv), solver_config=LOOSE)
    direct = [np.mean(pinball(yv - Xv @ f.coef, 0.5)) for f in res.fits]
    np.testing.assert_allclose(res.val_loss, direct, rtol=1e-12)
    assert res.selected == int(np.argmin(direct))
    assert res.best is res.fits[res.selected]


def test_hbic_rule_selects_argmin():
    X, y, d, _ = make_problem(n=80, p=12, seed=5)
    res = path_fit(d, y, "lasso", PathConfig(T=8, pivotal_sims=200), solver_config=LOOSE)
    assert res.selected == int(np.argmin(res.hbic))
    for f, h in zip(res.fits, res.hbic):
        assert h == pytest.approx(hbic(f.loss * 80, f.size, 80, 12), rel=1e-12)
    np.testing.assert_array_equal(res.sizes, [f.size for f in res.fits])


def test_validation_rule_requires_data():
    _, y, d, _ = make_problem()
    with pytest.raises(ConfigurationError):
        path_fit(d, y, "lasso", PathConfig(T=2, selection_rule="val"))


def test_explicit_grid_must_decrease():
    _, y, d, _ = make_problem()
    with pytest.raises(ConfigurationError):
        path_fit(d, y, "lasso", PathConfig(T=2), lambdas=[0.1, 0.2])
    with pytest.raises(ConfigurationError):
        path_fit(d, y, "lasso", PathConfig(T=2), lambdas=[])


def test_first_point_is_cold_then_warm():
    X, y, d, _ = make_problem(n=60, p=8, seed=6)
    grid = [0.2, 0.1, 0.05]
    res = path_fit(d, y, "lasso", PathConfig(T=3), lambdas=grid, solver_config=LOOSE)
    from fsqr.penalties import PenaltySpec
    from fsqr.solver import fit
    cold = fit(d, y, PenaltySpec("lasso", 0.5, 0.2), LOOSE)
    np.testing.assert_array_equal(res.fits[0].beta_std, cold.beta_std)
    warm = fit(d, y, PenaltySpec("lasso", 0.5, 0.1), LOOSE, init=cold.state)
    np.testing.assert_array_equal(res.fits[1].beta_std, warm.beta_std)


def test_shared_chain_matches_single_family():
    X, y, d, _ = make_problem(n=60, p=8, seed=7)
    cfg = PathConfig(T=4, pivotal_sims=100)
    both = path_fit_families(d, y, ["lasso", "mcp"], cfg, solver_config=LOOSE)
    alone = path_fit(d, y, "mcp", cfg, solver_config=LOOSE)
    for a, b in zip(both["mcp"].fits, alone.fits):
        np.testing.assert_array_equal(a.beta_std, b.beta_std)


def test_patience_stops_chain_early():
    X, y, d, _ = make_problem(n=60, p=8, seed=8)
    res = path_fit(d, y, "lasso", PathConfig(T=20, pivotal_sims=100, patience=1),
                   solver_config=LOOSE)
    assert res.n_fitted < 20
    assert res.fits[res.selected] is not None


def _total_iterations(seed, warm):
    data = gen_sparse(SparseDGPConfig(200, 400, seed=seed), 0)
    d, _ = standardize(partition(data.X, 5))
    cfg = PathConfig(T=10, pivotal_sims=300, warm_start=warm)
    return path_fit(d, data.y, "lasso", cfg, seed=seed, solver_config=LOOSE).total_iterations


def test_warm_start_dominance():
    warm = [_total_iterations(s, True) for s in range(5)]
    cold = [_total_iterations(s, False) for s in range(5)]
    assert np.median(warm) <= np.median(cold)


def test_serialization(tmp_path):
    X, y, d, _ = make_problem(n=50, p=6, seed=9)
    Xv, yv, _, _ = make_problem(n=30, p=6, seed=90)
    res = path_fit(d, y, "lasso", PathConfig(T=4, pivotal_sims=100), validation=(Xv, yv),
                   solver_config=LOOSE)
    res.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "lambda,size,hbic,val_loss,iterations,converged"
    assert len(lines) == 5
    res.to_json(tmp_path / "p.json")
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["selected"] == res.selected
    assert len(doc["lambdas"]) == 4
