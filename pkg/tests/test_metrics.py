import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hggs_lab.metrics import (
    UndefinedMetricError,
    gini_index,
    imbalance_ratio,
    partition_test_set,
    rmse,
    safe_metric,
    subset_report,
)
from hggs_lab.ode_lab.dataset import Dataset
from hggs_lab.sampler.gradient import gradient_degree


def brute_force_gini(y):
    y = np.asarray(y, dtype=float)
    total = 0.0
    for a in y:
        for b in y:
            total += abs(a - b)
    return total / (2 * len(y) * y.sum())


def test_exact_values():
    assert gini_index([0, 0, 1, 1]) == pytest.approx(0.5)
    assert imbalance_ratio([0, 0, 1, 1]) == 1.0
    assert rmse([0, 0], [3, 4]) == pytest.approx(3.5355, abs=1e-4)


def test_undefined_cases():
    with pytest.raises(UndefinedMetricError):
        imbalance_ratio([0, 0, 0])
    with pytest.raises(UndefinedMetricError):
        gini_index([0, 0])
    assert safe_metric(gini_index, [0, 0]) is None
    with pytest.raises(ValueError):
        rmse([1, 2], [1])
    with pytest.raises(ValueError):
        gini_index([-1, 2])


def test_fast_gini_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 60))
        y = rng.random(n) * (rng.random(n) < 0.6)
        if y.sum() == 0:
            y[0] = 1.0
        assert abs(gini_index(y) - brute_force_gini(y)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=50).filter(lambda v: sum(v) > 1e-6),
       st.floats(1e-3, 1e3))
def test_gini_scale_and_permutation_invariance(values, c):
    y = np.asarray(values)
    g = gini_index(y)
    assert gini_index(c * y) == pytest.approx(g, abs=1e-12)
    assert gini_index(y[::-1]) == pytest.approx(g, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=30), st.data())
def test_rmse_symmetry(a, data):
    b = data.draw(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=len(a), max_size=len(a)))
    assert rmse(a, b) == rmse(b, a)


def test_ir_permutation_invariant():
    y = np.array([0, 0, 0.3, 0, 0.1])
    assert imbalance_ratio(y) == imbalance_ratio(y[::-1]) == 1.5


def _test_set(n=200, seed=0):
    rng = np.random.default_rng(seed)
    coeffs = np.column_stack([rng.random(n) * 5, rng.random(n) * 15])
    y = np.where(coeffs[:, 1] > 1 + coeffs[:, 0] ** 2, 0.05 + 0.02 * coeffs[:, 0], 0.0)
    return Dataset("brusselator", coeffs, y)


def test_partition_subsets():
    test = _test_set()
    part = partition_test_set(test)
    assert np.array_equal(part.overall, np.arange(200))
    assert set(part.majority) | set(part.minority) == set(range(200))
    assert not set(part.majority) & set(part.minority)
    assert len(part.boundary) == math.ceil(0.2 * 200)
    gd = gradient_degree(test, 5)
    assert gd[part.boundary].min() >= np.delete(gd, part.boundary).max()


def test_subset_report_values():
    test = _test_set(100, seed=1)
    part = partition_test_set(test)
    pred = test.freqs + 0.01
    rep = subset_report(pred, test, part)
    for name in ("overall", "majority", "minority", "boundary"):
        assert rep.rmse[name] == pytest.approx(0.01)
    assert rep.sizes["overall"] == 100
    assert rep.ir == imbalance_ratio(test.freqs)
    train_labels = np.array([0, 0.1, 0.2])
    assert subset_report(pred, test, part, train_labels).ir == 0.5
