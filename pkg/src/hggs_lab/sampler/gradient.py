"""Gradient degree scores and the Gradient-based Filtering layer."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..ode_lab.dataset import Dataset
from ..sampling_utils import stable_rank, weighted_sample_without_replacement
from ..surrogate import MlpSurrogate, residuals


class ConfigurationError(ValueError):
    pass


class InconsistentDuplicateError(ValueError):
    """Two identical coefficient vectors carry different labels."""


def neighbor_indices(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbours of each point, excluding the point itself."""
    n = points.shape[0]
    if n <= k:
        raise ValueError(f"need more than K={k} samples, got {n}")
    dist, idx = cKDTree(points).query(points, k=k + 1)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    own = idx == np.arange(n)[:, None]
    # a point may be missing from its own list when more than k duplicates exist
    drop = np.where(own.any(axis=1), own.argmax(axis=1), k)
    keep = np.ones_like(own)
    keep[np.arange(n), drop] = False
    return idx[keep].reshape(n, k), dist[keep].reshape(n, k)


def gradient_degree_arrays(unit_coords, labels, k: int = 5) -> np.ndarray:
    """Mean over the K nearest neighbours of squared label change over squared distance."""
    x = np.asarray(unit_coords, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1:
        raise ValueError("K must be at least 1")
    idx, dist = neighbor_indices(x, k)
    dy2 = (y[idx] - y[:, None]) ** 2
    d2 = dist ** 2
    zero = d2 == 0.0
    if np.any(zero & (dy2 > 0)):
        bad = np.argwhere(zero & (dy2 > 0))[0]
        raise InconsistentDuplicateError(
            f"samples {bad[0]} and {idx[bad[0], bad[1]]} share coefficients but not labels"
        )
    ratio = np.divide(dy2, d2, out=np.zeros_like(dy2), where=~zero)
    return ratio.mean(axis=1)


def gradient_degree(dataset: Dataset, k: int = 5) -> np.ndarray:
    """Gradient degree of every sample, distances taken in the unit-normalized box."""
    return gradient_degree_arrays(dataset.spec.normalize(dataset.coeffs), dataset.freqs, k)


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 5
    r: float = 0.2
    # None means N/2
    n_f: int | None = None
    n_s: int | None = None
    m_c: int = 20
    # per-cycle counts; None derives them from n_s / m_c at a 6:4 split
    n_v1: int | None = None
    n_v2: int | None = None
    seed: int = 0
    # "residual": residual-proportional draw; "top_residual": highest residuals
    gf2_mode: str = "residual"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("K must be at least 1")
        if not 0.0 < self.r < 1.0:
            raise ConfigurationError("filtering ratio r must lie in (0, 1)")
        if self.m_c < 0:
            raise ConfigurationError("m_c must be non-negative")
        if self.gf2_mode not in ("residual", "top_residual"):
            raise ConfigurationError(f"unknown gf2_mode {self.gf2_mode!r}")

    def filter_budget(self, n: int) -> tuple[int, int]:
        """(top-gradient count ceil(rN), coarse-set size n_f) for N = ``n``."""
        n_f = n // 2 if self.n_f is None else int(self.n_f)
        n_gf1 = math.ceil(self.r * n)
        if not n_gf1 <= n_f <= n:
            raise ConfigurationError(f"need ceil(rN)={n_gf1} <= n_f={n_f} <= N={n}")
        return n_gf1, n_f

    def resolve(self, n: int) -> "ResolvedSampler":
        n_gf1, n_f = self.filter_budget(n)
        if self.n_v1 is not None and self.n_v2 is not None:
            n_v1, n_v2 = int(self.n_v1), int(self.n_v2)
            n_s = self.m_c * (n_v1 + n_v2)
            if self.n_s is not None and self.n_s != n_s:
                raise ConfigurationError(f"n_s={self.n_s} != m_c*(n_v1+n_v2)={n_s}")
        else:
            n_s = n // 2 if self.n_s is None else int(self.n_s)
            if self.m_c == 0:
                n_v1 = n_v2 = 0
                n_s = 0
            else:
                if n_s % self.m_c:
                    raise ConfigurationError(f"n_s={n_s} is not divisible by m_c={self.m_c}")
                per_cycle = n_s // self.m_c
                n_v1 = int(round(0.6 * per_cycle))
                n_v2 = per_cycle - n_v1
        if min(n_v1, n_v2) < 0:
            raise ConfigurationError("per-cycle counts must be non-negative")
        return ResolvedSampler(self, n, n_gf1, n_f, n_s, n_v1, n_v2)


@dataclass(frozen=True)
class ResolvedSampler:
    cfg: SamplerConfig
    n: int
    n_gf1: int
    n_f: int
    n_s: int
    n_v1: int
    n_v2: int

    @property
    def eta(self) -> float:
        return (self.n_f + self.n_s) / (self.n + self.n_s)


@dataclass
class FilterResult:
    indices: np.ndarray
    top_indices: np.ndarray
    global_indices: np.ndarray
    scores: np.ndarray


def gradient_filter(
    dataset: Dataset,
    warm_model: MlpSurrogate | None,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Dataset, FilterResult]:
    """Coarse set: the top ceil(rN) samples by gradient degree plus a residual-weighted remainder.

    The warm model supplies residuals for the remainder draw; without one the
    draw is uniform.
    """
    n_gf1, n_f = cfg.filter_budget(len(dataset))
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    gd = gradient_degree(dataset, cfg.k)
    order = stable_rank(gd, dataset.spec.normalize(dataset.coeffs))
    top = order[:n_gf1]
    rest = np.sort(order[n_gf1:])
    n_gf2 = n_f - n_gf1
    if warm_model is not None:
        w = residuals(warm_model, dataset)[rest]
    else:
        w = np.ones(len(rest))
    if n_gf2 == 0:
        picked = np.empty(0, dtype=int)
    elif cfg.gf2_mode == "top_residual":
        picked = rest[stable_rank(w, dataset.spec.normalize(dataset.coeffs[rest]))[:n_gf2]]
    else:
        if not np.any(w > 0):
            w = np.ones(len(rest))
        picked = rest[weighted_sample_without_replacement(w, n_gf2, rng)]
    chosen = np.sort(np.concatenate([top, picked]))
    info = FilterResult(chosen, np.sort(top), np.sort(picked), gd)
    return dataset.subset(chosen, tag="gradient_filter"), info
