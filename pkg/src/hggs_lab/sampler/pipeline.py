"""The two-layer sampling loop: filter once, then stratify-sample-label-retrain."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..metrics import gini_index, imbalance_ratio, safe_metric
from ..ode_lab.dataset import Dataset, label_batch
from ..ode_lab.frequency import FrequencyConfig
from ..ode_lab.integrator import IntegrationConfig
from ..ode_lab.systems import SystemSpec
from ..surrogate import MlpSurrogate, TrainConfig, TrainResult, new_model, residuals, train
from .gradient import FilterResult, SamplerConfig, gradient_filter
from .mgs import mgs_generate
from .stratify import gmm_stratify

log = logging.getLogger(__name__)


class SamplingAbortError(RuntimeError):
    pass


@dataclass
class SamplerRun:
    """Outcome of one sampling method: final model, training data and accounting."""

    method: str
    model: MlpSurrogate
    train_set: Dataset
    history: list[dict]
    initial_size: int
    new_labels: int
    extra: dict = field(default_factory=dict)

    @property
    def eta(self) -> float:
        return len(self.train_set) / (self.initial_size + self.new_labels)


@dataclass(frozen=True)
class LabelingConfig:
    integration: IntegrationConfig = IntegrationConfig()
    frequency: FrequencyConfig = FrequencyConfig()
    workers: int = 1
    max_failure_fraction: float = 0.2


def cycle_record(cycle: int, data: Dataset, fit: TrainResult, t_start: float, **extra) -> dict:
    rec = {
        "cycle": cycle,
        "train_size": len(data),
        "strata_sizes": extra.pop("strata_sizes", None),
        "fallbacks": extra.pop("fallbacks", []),
        "train_rmse": fit.train_rmse[fit.best_epoch] if fit.train_rmse else None,
        "val_rmse": fit.val_rmse[fit.best_epoch] if fit.val_rmse else None,
        "ir": safe_metric(imbalance_ratio, data.freqs),
        "gi": safe_metric(gini_index, data.freqs),
        "wall_ms": int(round(1000 * (time.perf_counter() - t_start))),
    }
    rec.update(extra)
    return rec


def write_history(records, path, method: str | None = None) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            row = dict(rec)
            if method is not None:
                row = {"method": method, **row}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def label_new_points(spec: SystemSpec, points, labeling: LabelingConfig, seed: int, tag: str) -> Dataset:
    new = label_batch(
        spec, points, labeling.integration, labeling.frequency,
        master_seed=seed, workers=labeling.workers, generator=tag,
    )
    failures = new.provenance["failure_count"]
    if len(new) and failures > labeling.max_failure_fraction * len(new):
        raise SamplingAbortError(
            f"{failures} of {len(new)} new {spec.system_id.value} samples failed to integrate "
            f"(limit {labeling.max_failure_fraction:.0%}); see provenance failed_indices"
        )
    return new


def hggs_run(
    spec: SystemSpec,
    initial: Dataset,
    val: Dataset | None,
    scfg: SamplerConfig,
    tcfg: TrainConfig,
    labeling: LabelingConfig | None = None,
) -> SamplerRun:
    """Warm-up, gradient filtering, then ``m_c`` rounds of stratified genetic sampling."""
    labeling = labeling or LabelingConfig()
    res = scfg.resolve(len(initial))
    rng = np.random.default_rng(scfg.seed)
    t_start = time.perf_counter()

    model = new_model(spec, tcfg)
    warm_model = None
    if tcfg.warm_epochs > 0:
        warm_model = train(model, initial, val, tcfg, epochs=tcfg.warm_epochs).model
        model = warm_model
    data, gf = gradient_filter(initial, warm_model, scfg, rng)
    if tcfg.reinitialize:
        model = new_model(spec, tcfg)
    fit = train(model, data, val, tcfg)
    model = fit.model
    history = [cycle_record(0, data, fit, t_start, n_top=len(gf.top_indices), n_global=len(gf.global_indices))]
    log.info("HGGS cycle 0: |S|=%d val_rmse=%s", len(data), history[-1]["val_rmse"])

    new_labels = 0
    for k in range(scfg.m_c):
        t_cycle = time.perf_counter()
        strat = gmm_stratify(residuals(model, data))
        batch = mgs_generate(strat, data.coeffs, res.n_v1, res.n_v2, rng, spec)
        new = label_new_points(spec, batch.points, labeling, scfg.seed, "mgs")
        new_labels += len(new)
        data = data.concat(new)
        start = new_model(spec, tcfg, seed=tcfg.seed + k + 1) if tcfg.reinitialize else model
        fit = train(start, data, val, tcfg)
        model = fit.model
        history.append(cycle_record(
            k + 1, data, fit, t_cycle,
            strata_sizes=list(strat.sizes), fallbacks=batch.fallbacks + (["tercile"] if strat.fallback else []),
            new_oscillatory=int(np.count_nonzero(new.freqs)),
        ))
        log.info("HGGS cycle %d: |S|=%d val_rmse=%s", k + 1, len(data), history[-1]["val_rmse"])

    run = SamplerRun("HGGS", model, data, history, len(initial), new_labels)
    run.extra["filter"] = _filter_summary(gf)
    return run


def _filter_summary(gf: FilterResult) -> dict:
    return {"top": int(len(gf.top_indices)), "global": int(len(gf.global_indices))}
