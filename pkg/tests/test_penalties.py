import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsqr.design import partition, standardize
from fsqr.errors import ConfigurationError
from fsqr.penalties import PenaltySpec, lla_fit, lla_weights, mcp_derivative, scad_derivative
from fsqr.solver import SolverConfig, fit

from conftest import make_problem


def test_scad_branches():
    assert scad_derivative(0.0, 1.3, 3.7) == 1.3
    assert scad_derivative(3.7 * 1.3, 1.3, 3.7) == 0.0
    assert scad_derivative(2.35, 1.0, 3.7) == pytest.approx(0.5, abs=1e-12)


def test_mcp_branches():
    assert mcp_derivative(0.0, 0.4, 3.0) == 0.4
    assert mcp_derivative(1.5, 0.5, 3.0) == 0.0
    assert mcp_derivative(9.0, 0.5, 3.0) == 0.0
    assert mcp_derivative(3.0, 2.0, 3.0) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("a", [2.0, 1.5, -1.0])
def test_scad_requires_a_above_two(a):
    with pytest.raises(ConfigurationError):
        scad_derivative(0.1, 1.0, a)
    with pytest.raises(ConfigurationError):
        PenaltySpec("scad", 0.5, 1.0, a=a)


@pytest.mark.parametrize("a", [1.0, 0.5])
def test_mcp_requires_a_above_one(a):
    with pytest.raises(ConfigurationError):
        mcp_derivative(0.1, 1.0, a)
    with pytest.raises(ConfigurationError):
        PenaltySpec("mcp", 0.5, 1.0, a=a)


def test_default_concavity():
    assert PenaltySpec("scad", 0.5, 1.0).a == 3.7
    assert PenaltySpec("mcp", 0.5, 1.0).a == 3.0


@pytest.mark.parametrize("kwargs", [
    {"family": "ridge"}, {"tau": 0.0}, {"tau": 1.0}, {"lam": -0.1},
    {"family": "scad", "lla_steps": 0},
])
def test_penalty_spec_validation(kwargs):
    base = {"family": "lasso", "tau": 0.5, "lam": 0.1}
    base.update(kwargs)
    with pytest.raises(ConfigurationError):
        PenaltySpec(**base)


def test_weight_vector_zeroes_intercept():
    w = PenaltySpec("lasso", 0.5, 0.2).weight_vector(4, intercept_index=2)
    np.testing.assert_array_equal(w, [0.2, 0.2, 0.0, 0.2])
    custom = PenaltySpec("lasso", 0.5, 0.2, weights=np.array([5.0, 1.0, 2.0]))
    np.testing.assert_array_equal(custom.weight_vector(3), [0.0, 1.0, 2.0])


@settings(max_examples=200, deadline=None)
@given(lam=st.floats(0, 5), a_extra=st.floats(0.01, 10), b1=st.floats(0, 50), b2=st.floats(0, 50))
def test_derivatives_monotone_bounded(lam, a_extra, b1, b2):
    lo, hi = min(b1, b2), max(b1, b2)
    for f, a in ((scad_derivative, 2 + a_extra), (mcp_derivative, 1 + a_extra)):
        d_lo, d_hi = f(lo, lam, a), f(hi, lam, a)
        assert 0.0 <= d_hi <= d_lo + 1e-12 <= lam + 1e-12
        if hi >= a * lam:
            assert d_hi == 0.0


@settings(max_examples=100, deadline=None)
@given(lam=st.floats(0.01, 3), a_extra=st.floats(0.01, 5), b=st.floats(0, 30))
def test_derivatives_continuous(lam, a_extra, b):
    eps = 1e-9
    for f, a in ((scad_derivative, 2 + a_extra), (mcp_derivative, 1 + a_extra)):
        assert abs(f(b + eps, lam, a) - f(b, lam, a)) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=20), st.floats(0, 2),
       st.sampled_from(["scad", "mcp"]))
def test_lla_weights_in_range(beta, lam, family):
    w = lla_weights(PenaltySpec(family, 0.5, lam), np.array(beta))
    assert w[0] == 0.0
    assert np.all((w >= 0) & (w <= lam))


def test_one_step_from_zero_is_lasso_bitwise():
    X, y, d, _ = make_problem(n=50, p=6, seed=9)
    cfg = SolverConfig(max_iter=400)
    pen = PenaltySpec("scad", 0.5, 0.05)
    w0 = lla_weights(pen, np.zeros(d.p_total))
    a = fit(d, y, PenaltySpec("lasso", 0.5, 0.05), cfg)
    b = fit(d, y, PenaltySpec("lasso", 0.5, 0.05, weights=w0), cfg)
    np.testing.assert_array_equal(a.beta_std, b.beta_std)
    np.testing.assert_array_equal(a.state.theta, b.state.theta)


def test_scad_large_coefficient_is_unpenalized():
    pen = PenaltySpec("scad", 0.5, 0.125, a=4.0)
    w = lla_weights(pen, np.array([5.0, 0.5, -0.75, 0.0, 0.0625]))
    assert w[1] == 0.0 and w[2] == 0.0
    assert w[3] == 0.125 and w[4] == 0.125


def test_lla_fit_bookkeeping():
    X, y, d, _ = make_problem(n=60, p=8, seed=2)
    cfg = SolverConfig(max_iter=3000)
    res = lla_fit(d, y, PenaltySpec("mcp", 0.5, 0.08, lla_steps=2), cfg)
    assert res.family == "mcp" and res.lla_steps == 2
    step0 = fit(d, y, PenaltySpec("lasso", 0.5, 0.08), cfg)
    assert res.n_iter > step0.n_iter
    with pytest.raises(ConfigurationError):
        lla_fit(d, y, PenaltySpec("lasso", 0.5, 0.08), cfg)


def test_lla_final_step_is_weighted_l1_stationary():
    from fsqr.oracle import kkt_check
    X, y, d, _ = make_problem(n=40, p=5, seed=3)
    cfg = SolverConfig(tol_primal=1e-9, tol_change=1e-10, max_iter=300000)
    res = lla_fit(d, y, PenaltySpec("scad", 0.5, 0.1), cfg)
    rep = kkt_check(d, y, res.beta_std, res.state.z, res.state.theta, res.weights, tau=0.5)
    assert rep.max_violation <= 1e-6


def test_mcp_error_not_above_lasso_small_instance():
    rng = np.random.default_rng(11)
    n, p = 200, 20
    Z = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[[0, 4, 9]] = [1.5, -1.0, 1.0]
    y = Z @ beta + rng.standard_normal(n)
    X = np.column_stack([np.ones(n), Z])
    d, _ = standardize(partition(X, 3))
    cfg = SolverConfig(max_iter=50000)
    lam = 0.08
    lasso = fit(d, y, PenaltySpec("lasso", 0.5, lam), cfg)
    mcp = lla_fit(d, y, PenaltySpec("mcp", 0.5, lam), cfg)
    ae = lambda r: np.abs(r.feature_coef - beta).sum()
    assert ae(mcp) <= ae(lasso)
