"""Multigrid Genetic Sampling: crossover and mutation inside sample-spanned boxes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..ode_lab.systems import SystemSpec
from .stratify import ResidualStratification

log = logging.getLogger(__name__)


def grid_sample_pair(a, b, rng: np.random.Generator, alpha=None) -> np.ndarray:
    """Uniform point in the axis-aligned box spanned by ``a`` and ``b``.

    Computes alpha * (a - b) + b componentwise with alpha ~ U[0, 1)^D.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if alpha is None:
        alpha = rng.random(a.shape[-1])
    return np.asarray(alpha, dtype=float) * (a - b) + b


@dataclass
class MgsBatch:
    points: np.ndarray
    n_crossover: int
    n_mutation: int
    fallbacks: list[str] = field(default_factory=list)


def mgs_generate(
    strat: ResidualStratification,
    coeffs: np.ndarray,
    n_v1: int,
    n_v2: int,
    rng: np.random.Generator,
    spec: SystemSpec | None = None,
) -> MgsBatch:
    """``n_v1`` crossover points (high x high) then ``n_v2`` mutation points (high x medium).

    ``coeffs`` are the model-unit coefficients the stratification indexes.
    When fewer than two high-residual samples exist the medium stratum is
    merged in; any remaining deficit is drawn uniformly from the box (needs
    ``spec``). An empty medium stratum makes mutation pair two high samples.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    dim = coeffs.shape[1]
    fallbacks: list[str] = []
    if n_v1 + n_v2 == 0:
        return MgsBatch(np.empty((0, dim)), 0, 0, fallbacks)
    high = np.asarray(strat.high, dtype=int)
    medium = np.asarray(strat.medium, dtype=int)
    if len(high) < 2:
        high = np.union1d(high, medium)
        fallbacks.append("high_merged_with_medium")
        log.info("high-residual stratum has %d members; merged with medium", len(strat.high))

    points = []
    uniform_needed = 0
    if len(high) >= 2:
        for _ in range(n_v1):
            i, j = rng.choice(len(high), size=2, replace=False)
            points.append(grid_sample_pair(coeffs[high[i]], coeffs[high[j]], rng))
    else:
        uniform_needed += n_v1

    partners = medium
    if len(medium) == 0:
        partners = high
        fallbacks.append("mutation_partner_from_high")
        log.info("medium-residual stratum empty; mutation partners drawn from high")
    if len(high) >= 1 and len(partners) >= 1:
        for _ in range(n_v2):
            i = rng.integers(len(high))
            j = rng.integers(len(partners))
            points.append(grid_sample_pair(coeffs[high[i]], coeffs[partners[j]], rng))
    else:
        uniform_needed += n_v2

    if uniform_needed:
        if spec is None:
            raise ValueError("uniform fallback needs the system's coefficient box")
        fallbacks.append(f"uniform_fill_{uniform_needed}")
        log.warning("too few stratified samples; drawing %d points uniformly", uniform_needed)
        points.extend(spec.denormalize(rng.random((uniform_needed, dim))))
    return MgsBatch(np.asarray(points).reshape(-1, dim), n_v1, n_v2, fallbacks)
