"""Comparison samplers: LHS-only, importance resampling, uncertainty sampling, reservoir replacement.

Every method follows the HGGS training schedule (warm-up, then ``cycles + 1``
stages of ``epochs_per_stage``) so that only the data differs.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

from .ode_lab.dataset import Dataset, lhs_generate
from .ode_lab.systems import SystemSpec
from .sampler.pipeline import LabelingConfig, SamplerRun, cycle_record, label_new_points
from .sampling_utils import exponential_keys, stable_rank
from .surrogate import MlpSurrogate, TrainConfig, new_model, predict, residuals, train

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    LHS = "LHS-only"
    IS = "IS"
    IS_DAGGER = "IS-dagger"
    US_P = "US-P"
    US_S = "US-S"
    WRS = "WRS"
    HGGS = "HGGS"
    # reserved so result schemas stay stable; not implemented
    VESSAL = "VeSSAL"
    SMOTE = "SMOTE"


NEW_SAMPLE_METHODS = {Method.US_P, Method.US_S, Method.WRS, Method.HGGS}
IMPLEMENTED = {Method.LHS, Method.IS, Method.IS_DAGGER, Method.US_P, Method.US_S, Method.WRS, Method.HGGS}


def parse_method(name: str) -> Method:
    key = name.strip().lower().replace("_", "-").replace("†", "-dagger")
    for m in Method:
        if m.value.lower() == key:
            return m
    aliases = {"lhs": Method.LHS, "is+": Method.IS_DAGGER, "isdagger": Method.IS_DAGGER}
    if key in aliases:
        return aliases[key]
    raise ValueError(f"unknown method {name!r}")


@dataclass(frozen=True)
class BaselineConfig:
    method: Method = Method.LHS
    cycles: int = 20
    # per-cycle selection size o; None derives it from the new-sample budget
    o: int | None = None
    pool_factor: int = 10
    chunk_factor: int = 5
    max_stream_chunks: int = 20
    patience_is: int = 50
    k: int = 5
    seed: int = 0
    # WRS replaces this fraction of each labeled candidate chunk
    wrs_replace_fraction: float = 0.5

    def accounting(self, initial_size: int) -> tuple[int, int, int]:
        """(retained initial samples, new-label budget, per-cycle labels)."""
        if self.method in (Method.LHS, Method.IS, Method.IS_DAGGER):
            return initial_size, 0, 0
        if self.cycles < 1:
            raise ValueError("new-sample methods need at least one cycle")
        budget = initial_size // 2
        if budget % self.cycles:
            raise ValueError(f"new-sample budget {budget} not divisible by {self.cycles} cycles")
        per_cycle = budget // self.cycles
        retained = initial_size if self.method is Method.WRS else initial_size - budget
        return retained, budget, per_cycle


def importance_resample(residual_vector, size: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. draws with probability proportional to residual (uniform if all zero)."""
    l = np.asarray(residual_vector, dtype=float)
    if np.any(l < 0):
        raise ValueError("residuals must be non-negative")
    total = float(l.sum())
    if total <= 0.0:
        log.warning("all residuals are zero; importance resampling falls back to uniform")
        return rng.integers(0, len(l), size=size)
    return rng.choice(len(l), size=size, replace=True, p=l / total)


def importance_probabilities(residual_vector) -> np.ndarray:
    l = np.asarray(residual_vector, dtype=float)
    total = l.sum()
    return l / total if total > 0 else np.full(len(l), 1.0 / len(l))


def proxy_scores(candidates, predicted, labeled: Dataset, k: int = 5) -> np.ndarray:
    """Gradient degree of unlabeled candidates against the labeled set, using predictions."""
    spec = labeled.spec
    tree = cKDTree(spec.normalize(labeled.coeffs))
    kk = min(k, len(labeled))
    dist, idx = tree.query(spec.normalize(candidates), k=kk)
    dist = dist.reshape(len(candidates), kk)
    idx = idx.reshape(len(candidates), kk)
    dy2 = (labeled.freqs[idx] - np.asarray(predicted)[:, None]) ** 2
    d2 = dist ** 2
    ratio = np.divide(dy2, d2, out=np.zeros_like(dy2), where=d2 > 0)
    return ratio.mean(axis=1)


def stream_select(chunks: Iterable[np.ndarray], o: int, chunk_size: int) -> tuple[list[int], bool]:
    """Accept stream positions whose score reaches the running (1 - o/chunk) quantile.

    Candidates are examined in arrival order and accepted while fewer than
    ``o`` are held; equal scores all pass the threshold, so a constant stream
    yields its first ``o`` items. Returns (accepted positions, exhausted flag);
    an exhausted stream is topped up with its best unaccepted items.
    """
    seen: list[float] = []
    accepted: list[int] = []
    q = max(0.0, 1.0 - o / chunk_size)
    for chunk in chunks:
        base = len(seen)
        seen.extend(float(s) for s in chunk)
        threshold = float(np.quantile(seen, q))
        for j, s in enumerate(chunk):
            if len(accepted) >= o:
                break
            if s >= threshold:
                accepted.append(base + j)
        if len(accepted) >= o:
            return accepted, False
    scores = np.asarray(seen)
    rest = [i for i in np.argsort(-scores, kind="stable") if i not in set(accepted)]
    accepted.extend(int(i) for i in rest[: o - len(accepted)])
    return accepted, True


def wrs_select(weights, o: int, rng: np.random.Generator) -> np.ndarray:
    """Top-``o`` items by weighted reservoir keys u ** (1 / w)."""
    if o <= 0:
        return np.empty(0, dtype=int)
    keys = exponential_keys(weights, rng)
    return np.argsort(-keys, kind="stable")[:o]


class _Schedule:
    """Warm-up then repeated warm-started stages, recording one history row per stage."""

    def __init__(self, spec: SystemSpec, val: Dataset | None, tcfg: TrainConfig):
        self.spec = spec
        self.val = val
        self.tcfg = tcfg
        self.history: list[dict] = []
        self.model: MlpSurrogate = new_model(spec, tcfg)

    def warm(self, data: Dataset) -> None:
        if self.tcfg.warm_epochs > 0:
            self.model = train(self.model, data, self.val, self.tcfg, epochs=self.tcfg.warm_epochs).model

    def stage(self, data: Dataset, cycle: int, on_epoch=None, record_data: Dataset | None = None, **extra):
        t0 = time.perf_counter()
        start = self.model
        if self.tcfg.reinitialize and cycle > 0:
            start = new_model(self.spec, self.tcfg, seed=self.tcfg.seed + cycle)
        fit = train(start, data, self.val, self.tcfg, on_epoch=on_epoch)
        self.model = fit.model
        self.history.append(cycle_record(cycle, record_data or data, fit, t0, **extra))
        return fit


def lhs_only_run(spec, initial: Dataset, val, bcfg: BaselineConfig, tcfg: TrainConfig, labeling=None) -> SamplerRun:
    sched = _Schedule(spec, val, tcfg)
    sched.warm(initial)
    for cycle in range(bcfg.cycles + 1):
        sched.stage(initial, cycle)
    return SamplerRun(Method.LHS.value, sched.model, initial, sched.history, len(initial), 0)


def _is_generic(spec, initial, val, bcfg, tcfg, dagger: bool) -> SamplerRun:
    rng = np.random.default_rng(bcfg.seed)
    sched = _Schedule(spec, val, tcfg)
    sched.warm(initial)
    n = len(initial)
    events = {"resamples": 0}

    def hook(epoch, net, result):
        if dagger:
            stalled = epoch - result.best_epoch
            if stalled < bcfg.patience_is or stalled % bcfg.patience_is:
                return None
        idx = importance_resample(residuals(net, initial), n, rng)
        events["resamples"] += 1
        return initial.coeffs[idx], initial.freqs[idx]

    for cycle in range(bcfg.cycles + 1):
        if dagger:
            data = initial
        else:
            data = initial.subset(importance_resample(residuals(sched.model, initial), n, rng))
        before = events["resamples"]
        sched.stage(data, cycle, on_epoch=hook, record_data=initial)
        sched.history[-1]["resample_events"] = events["resamples"] - before
    method = Method.IS_DAGGER if dagger else Method.IS
    run = SamplerRun(method.value, sched.model, initial, sched.history, n, 0)
    run.extra["resample_events"] = events["resamples"]
    return run


def is_run(spec, initial, val, bcfg, tcfg, labeling=None) -> SamplerRun:
    """Importance resampling after every epoch; no new labels."""
    return _is_generic(spec, initial, val, bcfg, tcfg, dagger=False)


def is_dagger_run(spec, initial, val, bcfg, tcfg, labeling=None) -> SamplerRun:
    """Importance resampling only after ``patience_is`` epochs without validation gain."""
    return _is_generic(spec, initial, val, bcfg, tcfg, dagger=True)


def _retained_subset(initial: Dataset, size: int, rng) -> Dataset:
    idx = np.sort(rng.choice(len(initial), size=size, replace=False))
    return initial.subset(idx)


def _cycle_seed(seed: int, cycle: int) -> int:
    return int(np.random.SeedSequence([seed, cycle]).generate_state(1)[0])


def us_pool_run(spec, initial, val, bcfg, tcfg, labeling=None) -> SamplerRun:
    """Each cycle, label the top-o of a fresh LHS pool ranked by the proxy score."""
    labeling = labeling or LabelingConfig()
    rng = np.random.default_rng(bcfg.seed)
    retained, budget, per_cycle = bcfg.accounting(len(initial))
    o = per_cycle if bcfg.o is None else bcfg.o
    sched = _Schedule(spec, val, tcfg)
    sched.warm(initial)
    data = _retained_subset(initial, retained, rng)
    sched.stage(data, 0)
    new_labels = 0
    for cycle in range(1, bcfg.cycles + 1):
        if o == 0:
            sched.stage(data, cycle)
            continue
        pool = lhs_generate(spec, max(o, bcfg.pool_factor * o), _cycle_seed(bcfg.seed, cycle))
        scores = proxy_scores(pool, predict(sched.model, pool), data, bcfg.k)
        top = stable_rank(scores, spec.normalize(pool))[:o]
        new = label_new_points(spec, pool[np.sort(top)], labeling, bcfg.seed, "us-pool")
        new_labels += len(new)
        data = data.concat(new)
        sched.stage(data, cycle, new_oscillatory=int(np.count_nonzero(new.freqs)))
    return SamplerRun(Method.US_P.value, sched.model, data, sched.history, len(initial), new_labels)


def us_stream_run(spec, initial, val, bcfg, tcfg, labeling=None) -> SamplerRun:
    """Each cycle, accept streamed LHS candidates above the running score quantile."""
    labeling = labeling or LabelingConfig()
    rng = np.random.default_rng(bcfg.seed)
    retained, budget, per_cycle = bcfg.accounting(len(initial))
    o = per_cycle if bcfg.o is None else bcfg.o
    chunk = max(o, bcfg.chunk_factor * o)
    sched = _Schedule(spec, val, tcfg)
    sched.warm(initial)
    data = _retained_subset(initial, retained, rng)
    sched.stage(data, 0)
    new_labels = 0
    for cycle in range(1, bcfg.cycles + 1):
        if o == 0:
            sched.stage(data, cycle)
            continue
        stream = lhs_generate(spec, chunk * bcfg.max_stream_chunks, _cycle_seed(bcfg.seed, cycle))
        model, labeled = sched.model, data

        def chunks():
            for c in range(bcfg.max_stream_chunks):
                part = stream[c * chunk:(c + 1) * chunk]
                yield proxy_scores(part, predict(model, part), labeled, bcfg.k)

        accepted, exhausted = stream_select(chunks(), o, chunk)
        if exhausted:
            log.info("US-S cycle %d: stream exhausted, topped up with best remaining", cycle)
        new = label_new_points(spec, stream[np.sort(accepted)], labeling, bcfg.seed, "us-stream")
        new_labels += len(new)
        data = data.concat(new)
        sched.stage(data, cycle, stream_exhausted=exhausted,
                    new_oscillatory=int(np.count_nonzero(new.freqs)))
    return SamplerRun(Method.US_S.value, sched.model, data, sched.history, len(initial), new_labels)


def wrs_run(spec, initial, val, bcfg, tcfg, labeling=None) -> SamplerRun:
    """Replace the lowest-residual training samples with reservoir-selected labeled candidates."""
    labeling = labeling or LabelingConfig()
    rng = np.random.default_rng(bcfg.seed)
    _, budget, per_cycle = bcfg.accounting(len(initial))
    o = bcfg.o if bcfg.o is not None else int(round(bcfg.wrs_replace_fraction * per_cycle))
    sched = _Schedule(spec, val, tcfg)
    sched.warm(initial)
    data = initial
    sched.stage(data, 0)
    new_labels = 0
    for cycle in range(1, bcfg.cycles + 1):
        cand = lhs_generate(spec, per_cycle, _cycle_seed(bcfg.seed, cycle))
        labeled = label_new_points(spec, cand, labeling, bcfg.seed, "wrs")
        new_labels += len(labeled)
        picked = wrs_select(residuals(sched.model, labeled), min(o, len(labeled)), rng)
        train_res = residuals(sched.model, data)
        drop = stable_rank(-train_res, spec.normalize(data.coeffs))[: len(picked)]
        keep = np.setdiff1d(np.arange(len(data)), drop)
        data = data.subset(keep).concat(labeled.subset(np.sort(picked)))
        sched.stage(data, cycle, replaced=int(len(picked)))
    return SamplerRun(Method.WRS.value, sched.model, data, sched.history, len(initial), new_labels)


RUNNERS = {
    Method.LHS: lhs_only_run,
    Method.IS: is_run,
    Method.IS_DAGGER: is_dagger_run,
    Method.US_P: us_pool_run,
    Method.US_S: us_stream_run,
    Method.WRS: wrs_run,
}
