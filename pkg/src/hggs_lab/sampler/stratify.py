"""Three-way residual stratification with a one-dimensional Gaussian mixture."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

MIN_WEIGHT = 1e-3
MIN_VARIANCE = 1e-12


@dataclass
class ResidualStratification:
    low: np.ndarray
    medium: np.ndarray
    high: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    fallback: bool
    log_likelihood: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.low), len(self.medium), len(self.high)


def _component_logpdf(x, means, variances):
    return -0.5 * (np.log(2.0 * np.pi * variances) + (x[:, None] - means) ** 2 / variances)


def fit_gmm_1d(x, n_iter: int = 100, tol: float = 1e-8):
    """EM for a 3-component 1-D mixture.

    Means start at the 1/6, 1/2, 5/6 quantiles (the tercile medians) with equal
    weights and one shared variance, the pooled within-tercile variance. The
    whole-sample variance is far too wide for well separated strata and leaves
    EM parked on a saddle where two components coincide. Returns (weights, means, variances, log-likelihood trace,
    degenerate flag). The trace holds the log-likelihood of every parameter
    set visited, initial one included.
    """
    x = np.asarray(x, dtype=float)
    means = np.quantile(x, [1 / 6, 3 / 6, 5 / 6])
    var0 = float(np.mean([np.var(part) for part in np.array_split(np.sort(x), 3)]))
    variances = np.full(3, var0)
    weights = np.full(3, 1 / 3)
    if var0 < MIN_VARIANCE:
        return weights, means, variances, [], True
    trace = []
    for _ in range(n_iter):
        logp = _component_logpdf(x, means, variances) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        if trace and ll - trace[-1] < tol:
            trace.append(ll)
            break
        trace.append(ll)
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        weights = nk / x.shape[0]
        if np.any(weights < MIN_WEIGHT):
            return weights, means, variances, trace, True
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = (resp * (x[:, None] - means) ** 2).sum(axis=0) / nk
        if np.any(variances < MIN_VARIANCE):
            return weights, means, variances, trace, True
    else:
        logp = _component_logpdf(x, means, variances) + np.log(weights)
        trace.append(float(logsumexp(logp, axis=1).sum()))
    return weights, means, variances, trace, False


def tercile_split(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = np.argsort(np.asarray(x, dtype=float), kind="stable")
    lo, mid, hi = np.array_split(order, 3)
    return np.sort(lo), np.sort(mid), np.sort(hi)


def gmm_stratify(residual_vector, seed: int | None = None) -> ResidualStratification:
    """Split residual indices into low / medium / high strata.

    Each sample goes to its maximum-posterior component and components are
    ordered by mean. Degenerate fits (a weight below 1e-3 or a variance below
    1e-12) fall back to rank terciles. The fit is deterministic, so ``seed``
    is accepted only for interface symmetry.
    """
    x = np.asarray(residual_vector, dtype=float)
    if x.ndim != 1 or x.shape[0] < 9:
        raise ValueError("stratification needs at least 9 residuals")
    weights, means, variances, trace, degenerate = fit_gmm_1d(x)
    if not degenerate and np.any(np.diff(np.sort(means)) <= 0.0):
        degenerate = True
    if degenerate:
        lo, mid, hi = tercile_split(x)
        tmeans = np.array([x[s].mean() for s in (lo, mid, hi)])
        return ResidualStratification(
            lo, mid, hi, tmeans, np.array([x[s].var() for s in (lo, mid, hi)]),
            np.array([len(lo), len(mid), len(hi)]) / len(x), True, trace,
            len(trace),
        )
    order = np.argsort(means, kind="stable")
    rank = np.empty(3, dtype=int)
    rank[order] = np.arange(3)
    logp = _component_logpdf(x, means, variances) + np.log(weights)
    assign = rank[np.argmax(logp, axis=1)]
    strata = [np.flatnonzero(assign == c) for c in range(3)]
    return ResidualStratification(
        strata[0], strata[1], strata[2],
        means[order], variances[order], weights[order], False, trace, len(trace),
    )
