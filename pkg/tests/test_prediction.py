import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fsqr.errors import ConfigurationError, DataError
from fsqr.prediction import CoverageReport, QuantilePair, coverage, predict_quantile


def test_intercept_only_model_is_constant():
    X = np.column_stack([np.ones(4), np.arange(8.0).reshape(4, 2)])
    np.testing.assert_array_equal(predict_quantile(X, [2.5, 0.0, 0.0]), 2.5)


def test_zero_feature_row_returns_intercept():
    assert predict_quantile(np.array([1.0, 0.0, 0.0]), [-0.3, 4.0, 9.0]) == pytest.approx(-0.3)


def test_predict_matches_dense_matvec():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((5, 3))
    b = rng.standard_normal(3)
    np.testing.assert_allclose(predict_quantile(X, b), X @ b, atol=1e-12)


def test_predict_shape_mismatch():
    with pytest.raises(DataError):
        predict_quantile(np.ones((3, 4)), np.ones(3))


def test_pair_validation():
    with pytest.raises(ConfigurationError):
        QuantilePair(0.9, np.zeros(2), 0.1, np.zeros(2))
    with pytest.raises(DataError):
        QuantilePair(0.1, np.zeros(2), 0.9, np.zeros(3))


def test_wide_band_covers_everything():
    X = np.ones((6, 1))
    y = np.linspace(-5, 5, 6)
    rep = coverage(QuantilePair(0.1, [-1e9], 0.9, [1e9]), X, y)
    assert rep.coverage == 1.0 and rep.lower_tail == 0.0 and rep.upper_tail == 0.0
    assert rep.crossing_count == 0


def test_crossed_band_counts_as_failure():
    X = np.ones((5, 1))
    rep = coverage(QuantilePair(0.1, [1.0], 0.9, [-1.0]), X, np.zeros(5))
    assert rep.coverage == 0.0
    assert rep.crossing_count == 5
    assert rep.lower_tail == 0.0 and rep.upper_tail == 0.0


def test_mixed_hand_example():
    # rows: covered, below, above, crossed
    X = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    pair = QuantilePair(0.1, np.array([-1.0, 3.0]), 0.9, np.array([1.0, 0.0]))
    rep = coverage(pair, X, np.array([0.0, -2.0, 2.0, 0.0]))
    assert (rep.covered, rep.below, rep.above, rep.crossing_count) == (1, 1, 1, 1)
    assert rep.coverage == 0.25
    assert rep.lower_tail == pytest.approx(1 / 3) and rep.upper_tail == pytest.approx(1 / 3)


def test_empty_test_set():
    with pytest.raises(DataError):
        coverage(QuantilePair(0.1, [0.0], 0.9, [1.0]), np.ones((0, 1)), np.zeros(0))


finite = st.floats(-100, 100, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40).flatmap(lambda n: st.tuples(
    arrays(float, (n, 3), elements=finite), arrays(float, n, elements=finite),
    arrays(float, 3, elements=finite), arrays(float, 3, elements=finite))))
def test_accounting_identity(data):
    X, y, blo, bhi = data
    rep = coverage(QuantilePair(0.1, blo, 0.9, bhi), X, y)
    assert rep.covered + rep.below + rep.above + rep.crossing_count == rep.n_test
    for v in (rep.coverage, rep.lower_tail, rep.upper_tail):
        assert 0.0 <= v <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100), st.floats(-50, 50))
def test_affine_invariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(30), rng.standard_normal((30, 2))])
    y = rng.standard_normal(30)
    blo = np.array([-1.0, 0.3, 0.1])
    bhi = rng.normal(size=3)
    base = coverage(QuantilePair(0.1, blo, 0.9, bhi), X, y)
    e0 = np.array([1.0, 0.0, 0.0])
    moved = coverage(QuantilePair(0.1, scale * blo + shift * e0, 0.9, scale * bhi + shift * e0),
                     X, scale * y + shift)
    # rounding can only flip points sitting exactly on a bound
    lo, hi = X @ blo, X @ bhi
    ties = np.isclose(y, lo, atol=1e-9) | np.isclose(y, hi, atol=1e-9) | np.isclose(lo, hi, atol=1e-9)
    if not ties.any():
        assert moved.covered == base.covered
        assert moved.below == base.below and moved.above == base.above
        assert moved.crossing_count == base.crossing_count


def test_report_serialization(tmp_path):
    rep = coverage(QuantilePair(0.1, [-1.0], 0.9, [1.0]), np.ones((3, 1)), np.array([0.0, 2.0, -3.0]))
    doc = json.loads(rep.to_json())
    assert doc["coverage"] == pytest.approx(1 / 3)
    rep.to_json(tmp_path / "c.json")
    assert json.loads((tmp_path / "c.json").read_text()) == doc
    header = CoverageReport.csv_header().split(",")
    assert len(header) == len(rep.csv_line().split(","))
    assert rep.pinball_lo == pytest.approx(np.mean([0.1 * 1, 0.1 * 3, 0.9 * 2]))
