"""Oscillatory-frequency operator: sustained-peak statistics on the late trajectory."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .integrator import Trajectory


@dataclass(frozen=True)
class FrequencyConfig:
    transient_fraction: float = 0.5
    min_peaks: int = 4
    rel_amplitude_floor: float = 0.01
    abs_amplitude_floor: float = 1e-6
    level_amplitude_floor: float = 1e-3
    period_cv_max: float = 0.2
    observed_index: int = 0
    # unsettled windows without enough peaks are re-integrated over doubled
    # horizons up to this multiple of T (1 disables extension)
    max_horizon_factor: int = 16

    def __post_init__(self):
        if not 0.0 <= self.transient_fraction < 1.0:
            raise ValueError("transient_fraction must lie in [0, 1)")
        if self.min_peaks < 2:
            raise ValueError("at least two peaks are needed to measure a period")


def _refine_peak_times(t: np.ndarray, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Vertex of the parabola through each peak sample and its neighbours."""
    inner = (idx > 0) & (idx < len(x) - 1)
    out = t[idx].astype(float)
    i = idx[inner]
    left, mid, right = x[i - 1], x[i], x[i + 1]
    denom = left - 2.0 * mid + right
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(denom != 0.0, 0.5 * (left - right) / denom, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    dt = t[1] - t[0]
    out[inner] = t[i] + shift * dt
    return out


def _window(times, signal, cfg):
    t = np.asarray(times, dtype=float)
    x = np.asarray(signal, dtype=float)
    start = int(np.ceil(cfg.transient_fraction * (len(t) - 1)))
    return t[start:], x[start:]


def _amplitude_floor(x, cfg):
    level = float(np.max(np.abs(x)))
    return max(cfg.abs_amplitude_floor, cfg.level_amplitude_floor * level)


def window_is_settled(traj: Trajectory, cfg: FrequencyConfig | None = None) -> bool:
    """True when the analysis window has converged to within the amplitude floor."""
    cfg = cfg or FrequencyConfig()
    _, x = _window(traj.times, traj.states[:, cfg.observed_index], cfg)
    if len(x) == 0:
        return True
    return float(np.max(x) - np.min(x)) < _amplitude_floor(x, cfg)


def peak_statistics(times, signal, cfg: FrequencyConfig | None = None):
    """Return (refined peak times, prominences) over the analysis window."""
    cfg = cfg or FrequencyConfig()
    t, x = _window(times, signal, cfg)
    if len(x) < 3:
        return np.empty(0), np.empty(0)
    span = float(np.max(x) - np.min(x))
    threshold = cfg.rel_amplitude_floor * max(span, _amplitude_floor(x, cfg))
    idx, props = find_peaks(x, prominence=threshold)
    # prominence is always > 0, so a flat window never yields peaks
    return _refine_peak_times(t, x, idx), props["prominences"]


def frequency_of_signal(times, signal, cfg: FrequencyConfig | None = None) -> float:
    cfg = cfg or FrequencyConfig()
    peak_times, _ = peak_statistics(times, signal, cfg)
    if len(peak_times) < cfg.min_peaks:
        return 0.0
    intervals = np.diff(peak_times)
    mean = float(np.mean(intervals))
    if mean <= 0.0:
        return 0.0
    if float(np.std(intervals)) / mean > cfg.period_cv_max:
        return 0.0
    return 1.0 / mean


def oscillatory_frequency(traj: Trajectory, cfg: FrequencyConfig | None = None) -> float:
    """Frequency (1/period) of a sustained oscillation in ``traj``, else 0.

    The first ``transient_fraction`` of the time span is discarded. Peaks of
    the observed component count only if their prominence reaches
    ``rel_amplitude_floor`` of the window range (itself floored at
    ``abs_amplitude_floor``). At least ``min_peaks`` such peaks with
    inter-peak coefficient of variation at most ``period_cv_max`` declare an
    oscillation.
    """
    cfg = cfg or FrequencyConfig()
    return frequency_of_signal(traj.times, traj.states[:, cfg.observed_index], cfg)
