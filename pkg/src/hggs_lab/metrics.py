"""Error, imbalance and diversity measures plus the four-way test partition."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .ode_lab.dataset import Dataset
from .sampler.gradient import gradient_degree
from .sampling_utils import stable_rank

SUBSETS = ("overall", "majority", "minority", "boundary")


class UndefinedMetricError(ValueError):
    pass


def rmse(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("rmse of empty input")
    d = p - y
    return math.sqrt(float(np.mean(d * d)))


def imbalance_ratio(labels) -> float:
    """Non-oscillatory count over oscillatory count."""
    y = np.asarray(labels, dtype=float)
    n_osc = int(np.count_nonzero(y != 0.0))
    if n_osc == 0:
        raise UndefinedMetricError("imbalance ratio needs at least one oscillatory label")
    return (y.size - n_osc) / n_osc


def gini_index(labels) -> float:
    """sum_ij |y_i - y_j| / (2 N sum_i y_i), via the sorted prefix identity."""
    y = np.sort(np.asarray(labels, dtype=float))
    if np.any(y < 0):
        raise ValueError("labels must be non-negative")
    total = float(y.sum())
    if total <= 0.0:
        raise UndefinedMetricError("Gini index undefined for all-zero labels")
    n = y.size
    rank_weight = 2.0 * np.arange(1, n + 1) - n - 1
    # sum_ij |y_i - y_j| = 2 * sum_i (2i - n - 1) y_(i)
    return float(2.0 * np.dot(rank_weight, y) / (2.0 * n * total))


def safe_metric(fn, labels):
    try:
        return fn(labels)
    except UndefinedMetricError:
        return None


@dataclass
class TestPartition:
    overall: np.ndarray
    majority: np.ndarray
    minority: np.ndarray
    boundary: np.ndarray

    def items(self):
        return ((name, getattr(self, name)) for name in SUBSETS)


def partition_test_set(test: Dataset, k: int = 5, boundary_fraction: float = 0.2) -> TestPartition:
    """Majority (y = 0), minority (y != 0) and the top gradient-degree fifth."""
    n = len(test)
    if n <= k:
        raise ValueError(f"test set of {n} samples cannot support K={k}")
    gd = gradient_degree(test, k)
    order = stable_rank(gd, test.spec.normalize(test.coeffs))
    n_boundary = math.ceil(boundary_fraction * n)
    return TestPartition(
        overall=np.arange(n),
        majority=np.flatnonzero(test.freqs == 0.0),
        minority=np.flatnonzero(test.freqs != 0.0),
        boundary=np.sort(order[:n_boundary]),
    )


@dataclass
class SubsetReport:
    rmse: dict
    sizes: dict
    ir: float | None
    gi: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def subset_report(predictions, test: Dataset, partition: TestPartition, train_labels=None) -> SubsetReport:
    """Per-subset RMSE on ``test``; IR and GI describe ``train_labels`` when given."""
    pred = np.asarray(predictions, dtype=float)
    errs, sizes = {}, {}
    for name, idx in partition.items():
        sizes[name] = int(len(idx))
        errs[name] = rmse(pred[idx], test.freqs[idx]) if len(idx) else None
    labels = test.freqs if train_labels is None else train_labels
    return SubsetReport(errs, sizes, safe_metric(imbalance_ratio, labels), safe_metric(gini_index, labels))
