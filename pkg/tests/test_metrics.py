import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gptrack import metrics
from gptrack.metrics import GospaParams

points = st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), max_size=5)


def test_rmse_examples():
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert metrics.rmse(x, x) == 0.0
    assert metrics.rmse(x, x + [3.0, 4.0]) == pytest.approx(5.0)
    assert metrics.rmse([[0.0, 0.0]], [[1.0, 1.0]]) == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        metrics.rmse(x, x[:5])


def test_rmse_pools_runs_before_root():
    t = np.zeros((2, 3, 2))
    e = t.copy()
    e[0] += [3.0, 4.0]
    assert metrics.rmse(t, e) == pytest.approx(math.sqrt(25 / 2))


@given(st.integers(0, 10_000), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_rmse_translation_invariant(seed, dx, dy):
    rng = np.random.default_rng(seed)
    t, e = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
    assert metrics.rmse(t + [dx, dy], e + [dx, dy]) == pytest.approx(metrics.rmse(t, e), abs=1e-9)


def test_gospa_examples():
    p = GospaParams(10, 2, 2)
    assert metrics.gospa(np.empty((0, 2)), np.empty((0, 2)), p) == 0.0
    assert metrics.gospa(np.empty((0, 2)), [[12.0, -7.0]], p) == pytest.approx(math.sqrt(50), abs=1e-4)
    assert metrics.gospa([[0.0, 0.0]], [[3.0, 4.0]], p) == pytest.approx(5.0)


def test_gospa_cutoff():
    assert metrics.gospa([[0.0, 0.0]], [[300.0, 400.0]]) == pytest.approx(10.0)


@pytest.mark.parametrize("bad", [dict(c=0), dict(alpha=0), dict(alpha=2.5), dict(p=0.5), dict(p=math.inf)])
def test_gospa_param_validation(bad):
    with pytest.raises(ValueError):
        GospaParams(**bad)


def test_assignment_examples():
    cost = np.full((3, 3), 5.0)
    np.fill_diagonal(cost, 1.0)
    rows, cols = metrics.optimal_assignment(cost)
    assert cols.tolist() == [0, 1, 2]
    rows, cols = metrics.optimal_assignment([[1.0, 0.0], [0.0, 1.0]])
    assert cols.tolist() == [1, 0]
    with pytest.raises(ValueError):
        metrics.optimal_assignment([[np.nan]])


@given(st.integers(0, 10_000))
def test_assignment_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    cost = rng.random((5, 5))
    rows, cols = metrics.optimal_assignment(cost)
    assert cost[rows, cols].sum() == pytest.approx(metrics.optimal_assignment_bruteforce(cost)[1], abs=1e-12)


@given(points, points)
def test_gospa_matches_bruteforce_and_is_symmetric(a, b):
    assert metrics.gospa(a, b) == pytest.approx(metrics.gospa_bruteforce(a, b), abs=1e-10)
    assert metrics.gospa(a, b) == pytest.approx(metrics.gospa(b, a), abs=1e-12)


@given(points)
def test_gospa_identity(a):
    assert metrics.gospa(a, a) == 0.0


@given(points, points, st.floats(1, 20), st.floats(0, 20))
def test_gospa_monotone_in_c(a, b, c, dc):
    assert metrics.gospa(a, b, GospaParams(c=c)) <= metrics.gospa(a, b, GospaParams(c=c + dc)) + 1e-9


def test_gospa_trace():
    truth = np.zeros((4, 3, 2))
    est = np.zeros((4, 3, 4))
    est[2, 0, :2] = [3.0, 4.0]
    tr = metrics.gospa_trace(truth, est)
    assert tr.tolist() == pytest.approx([0, 0, 5, 0])
    with pytest.raises(ValueError):
        metrics.gospa_trace(truth, est[:2])


def test_params_to_dict():
    assert GospaParams().to_dict() == {"c": 10.0, "alpha": 2.0, "p": 2.0}
