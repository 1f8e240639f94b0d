"""Random selection primitives shared by the samplers."""
from __future__ import annotations

import numpy as np


def exponential_keys(weights, rng: np.random.Generator) -> np.ndarray:
    """Efraimidis-Spirakis keys log(u) / w; larger keys win.

    Zero weights get -inf and are only reached after every positive weight.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    u = rng.random(w.shape[0])
    with np.errstate(divide="ignore"):
        return np.where(w > 0, np.log(u) / np.where(w > 0, w, 1.0), -np.inf)


def weighted_sample_without_replacement(weights, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` items drawn successively with probability proportional to weight.

    Items with zero weight are drawn uniformly once the positive mass is used up.
    """
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    if not 0 <= k <= n:
        raise ValueError(f"cannot draw {k} items from {n}")
    keys = exponential_keys(w, rng)
    tiebreak = rng.random(n)
    # lexsort: last key is primary
    order = np.lexsort((tiebreak, -keys))
    return order[:k]


def stable_rank(scores, coords) -> np.ndarray:
    """Indices sorted by descending score, ties broken by lexicographic coordinates."""
    scores = np.asarray(scores, dtype=float)
    coords = np.asarray(coords, dtype=float)
    keys = tuple(coords[:, j] for j in range(coords.shape[1] - 1, -1, -1)) + (-scores,)
    return np.lexsort(keys)
