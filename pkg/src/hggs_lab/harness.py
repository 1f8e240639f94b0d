"""Experiment configuration, dataset caching, method x seed sweeps and result export."""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .baselines import IMPLEMENTED, RUNNERS, BaselineConfig, Method, parse_method
from .metrics import SUBSETS, partition_test_set, subset_report
from .ode_lab.dataset import Dataset, generate_dataset, load_dataset, save_dataset
from .ode_lab.frequency import FrequencyConfig
from .ode_lab.integrator import IntegrationConfig
from .ode_lab.systems import SYSTEMS, get_system
from .sampler.gradient import SamplerConfig
from .sampler.pipeline import LabelingConfig, SamplerRun, hggs_run, write_history
from .surrogate import TrainConfig, predict

log = logging.getLogger(__name__)

CACHE_ENV = "HGGS_LAB_CACHE"
RESULT_FORMAT = "hggs-lab/run-result-v1"
ALL_METHODS = [m.value for m in Method if m in IMPLEMENTED]

# per-system training settings at full scale
SYSTEM_TRAINING = {
    "brusselator": dict(learning_rate=2e-3, warm_epochs=300, epochs_per_stage=3000, hidden=[128, 256, 128]),
    "cell_cycle": dict(learning_rate=2.5e-3, warm_epochs=200, epochs_per_stage=2000, hidden=[128, 256, 128]),
    "mpf": dict(learning_rate=2e-3, warm_epochs=300, epochs_per_stage=3000, hidden=[128, 128, 128, 128]),
    "activator_inhibitor": dict(learning_rate=2e-3, warm_epochs=250, epochs_per_stage=2500, hidden=[256, 256, 256, 256]),
}


def _section(props: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props}


_INT = {"type": "integer", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_OPT_INT = {"type": ["integer", "null"], "minimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hggs-lab experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "seeds"],
    "properties": {
        "system": {"type": "string", "enum": sorted(SYSTEMS)},
        "n_initial": _POS_INT,
        "n_val": _POS_INT,
        "n_test": _POS_INT,
        "methods": {"type": "array", "minItems": 1, "items": {"type": "string", "enum": ALL_METHODS}},
        "seeds": {"type": "array", "minItems": 1, "items": _INT},
        "data_seeds": _section({"initial": _INT, "val": _INT, "test": _INT}),
        "sampler": _section({
            "k": _POS_INT, "r": _POS_NUM, "n_f": _OPT_INT, "n_s": _OPT_INT, "m_c": _INT,
            "n_v1": _OPT_INT, "n_v2": _OPT_INT, "gf2_mode": {"enum": ["residual", "top_residual"]},
        }),
        "train": _section({
            "learning_rate": _POS_NUM, "weight_decay": {"type": "number", "minimum": 0},
            "epochs_per_stage": _POS_INT, "warm_epochs": _INT,
            "lr_decay_gamma": {"type": ["number", "null"]},
            "early_stop_patience": _POS_INT, "early_stop_min_delta": {"type": "number", "minimum": 0},
            "hidden": {"type": "array", "minItems": 1, "items": _POS_INT},
            "reinitialize": {"type": "boolean"}, "dtype": {"enum": ["float32", "float64"]},
        }),
        "baseline": _section({
            "o": _OPT_INT, "pool_factor": _POS_INT, "chunk_factor": _POS_INT,
            "max_stream_chunks": _POS_INT, "patience_is": _POS_INT, "k": _POS_INT,
            "wrs_replace_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        }),
        "integration": _section({
            "rel_tol": _POS_NUM, "abs_tol": _POS_NUM, "max_steps": _POS_INT,
            "output_grid_size": {"type": "integer", "minimum": 16},
            "method": {"enum": [None, "dopri5", "lsoda", "auto"]},
        }),
        "frequency": _section({
            "transient_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "min_peaks": {"type": "integer", "minimum": 3}, "rel_amplitude_floor": _NUM,
            "abs_amplitude_floor": _NUM, "level_amplitude_floor": _NUM, "period_cv_max": _POS_NUM,
            "observed_index": _INT, "max_horizon_factor": _POS_INT,
        }),
        "max_failure_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "out_dir": {"type": "string"},
        "cache_dir": {"type": "string"},
        "workers": _POS_INT,
    },
}

# keys that change where or how fast a run happens but not its numbers
_UNHASHED = ("out_dir", "cache_dir", "workers")


class ConfigError(ValueError):
    """Schema or consistency violation; ``errors`` lists 'path: message' strings."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid experiment config:\n  " + "\n  ".join(errors))
        self.errors = errors


def desk_preset(system: str) -> dict:
    """Laptop-sized experiment: 2000 initial samples, 10 cycles of 600 epochs, 5 seeds."""
    sid = get_system(system).system_id.value
    t = dict(SYSTEM_TRAINING[sid])
    t.update(epochs_per_stage=600, warm_epochs=t["warm_epochs"] * 600 // t["epochs_per_stage"], dtype="float32")
    return {
        "system": sid,
        "n_initial": 2000,
        "n_val": 1000,
        "n_test": 5000,
        "methods": list(ALL_METHODS),
        "seeds": [0, 1, 2, 3, 4],
        "sampler": {"n_f": 1000, "n_s": 1000, "m_c": 10},
        "train": t,
    }


def full_preset(system: str) -> dict:
    """Full-size experiment: 10k initial, 5k validation, 20 cycles at the per-system epoch counts."""
    sid = get_system(system).system_id.value
    return {
        "system": sid,
        "n_initial": 10000,
        "n_val": 5000,
        "n_test": 50000,
        "methods": list(ALL_METHODS),
        "seeds": [0, 1, 2, 3, 4],
        "sampler": {"m_c": 20},
        "train": dict(SYSTEM_TRAINING[sid]),
    }


PRESETS = {"desk": desk_preset, "full": full_preset}


@dataclass
class ExperimentConfig:
    system: str
    seeds: list[int]
    n_initial: int = 10000
    n_val: int = 5000
    n_test: int = 5000
    methods: list[str] = field(default_factory=lambda: list(ALL_METHODS))
    data_seeds: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    integration: dict = field(default_factory=dict)
    frequency: dict = field(default_factory=dict)
    max_failure_fraction: float = 0.2
    out_dir: str = "results"
    cache_dir: str = "cache"
    workers: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        errors = [
            f"{'/'.join(str(p) for p in err.absolute_path) or '<root>'}: {err.message}"
            for err in sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(doc), key=str)
        ]
        if errors:
            raise ConfigError(errors)
        cfg = cls(**copy.deepcopy(doc))
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError([f"<root>: not valid JSON ({exc})"]) from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def check(self) -> None:
        errors = []
        try:
            self.sampler_config(0).resolve(self.n_initial)
        except ValueError as exc:
            errors.append(f"sampler: {exc}")
        try:
            self.train_config(0)
        except ValueError as exc:
            errors.append(f"train: {exc}")
        seeds = self.resolved_data_seeds()
        if seeds["test"] in (seeds["initial"], seeds["val"]):
            errors.append("data_seeds/test: test seed must differ from train and validation seeds")
        m_c = self.sampler_config(0).m_c
        for name in self.methods:
            m = parse_method(name)
            if m in (Method.US_P, Method.US_S, Method.WRS):
                try:
                    self.baseline_config(m, 0).accounting(self.n_initial)
                except ValueError as exc:
                    errors.append(f"methods: {name}: {exc} (cycles = m_c = {m_c})")
        if errors:
            raise ConfigError(errors)

    def config_hash(self) -> str:
        doc = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    @property
    def spec(self):
        return get_system(self.system)

    def resolved_data_seeds(self) -> dict:
        # fixed per system so every method sees the same data; test seed disjoint
        code = self.spec.code
        base = {"initial": 1000 + code, "val": 2000 + code, "test": 3000 + code}
        base.update(self.data_seeds)
        return base

    def train_config(self, seed: int) -> TrainConfig:
        t = dict(SYSTEM_TRAINING[self.spec.system_id.value])
        t.update(self.train)
        t["hidden"] = tuple(t["hidden"])
        return TrainConfig(seed=seed, **t)

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(seed=seed, **self.sampler)

    def baseline_config(self, method: Method, seed: int) -> BaselineConfig:
        return BaselineConfig(method=method, cycles=self.sampler_config(seed).m_c, seed=seed, **self.baseline)

    def labeling(self, workers: int | None = None) -> LabelingConfig:
        return LabelingConfig(
            IntegrationConfig(**self.integration),
            FrequencyConfig(**self.frequency),
            workers=self.workers if workers is None else workers,
            max_failure_fraction=self.max_failure_fraction,
        )

    def labeling_hash(self) -> str:
        lab = self.labeling(workers=1)
        doc = {"integration": asdict(lab.integration), "frequency": asdict(lab.frequency)}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]


def resolve_cache_dir(flag: str | None, cfg: ExperimentConfig | None = None) -> Path:
    """--cache flag, then the environment variable, then the config value."""
    if flag:
        return Path(flag)
    if os.environ.get(CACHE_ENV):
        return Path(os.environ[CACHE_ENV])
    return Path(cfg.cache_dir if cfg is not None else "cache")


@dataclass
class DatasetCache:
    root: Path
    hits: int = 0
    misses: int = 0

    def path_for(self, system: str, n: int, seed: int, labeling_hash: str) -> Path:
        return Path(self.root) / f"{system}_n{n}_seed{seed}_{labeling_hash}.csv"

    def get(self, cfg: ExperimentConfig, n: int, seed: int, workers: int = 1) -> Dataset:
        spec = cfg.spec
        path = self.path_for(spec.system_id.value, n, seed, cfg.labeling_hash())
        if path.exists():
            self.hits += 1
            log.info("cache hit: %s", path)
            return load_dataset(path)
        self.misses += 1
        log.info("cache miss: generating %s", path)
        lab = cfg.labeling(workers)
        ds = generate_dataset(spec, n, seed, lab.integration, lab.frequency, workers=workers)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, path)
        return ds


@dataclass
class RunResult:
    method: str
    system: str
    seed: int
    metrics: dict
    final_train_size: int
    initial_size: int
    new_labels: int
    eta: float
    history_path: str
    wall_ms: int
    config_hash: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"format": RESULT_FORMAT, **asdict(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "RunResult":
        doc = dict(doc)
        doc.pop("format", None)
        return cls(**doc)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def result_stem(method: str, seed: int) -> str:
    return f"{method}_seed{seed}"


def run_method(cfg: ExperimentConfig, method: Method, seed: int, initial: Dataset, val: Dataset,
               labeling: LabelingConfig) -> SamplerRun:
    """Train one method; only training and validation data are visible here."""
    spec = cfg.spec
    tcfg = cfg.train_config(seed)
    if method is Method.HGGS:
        return hggs_run(spec, initial, val, cfg.sampler_config(seed), tcfg, labeling)
    return RUNNERS[method](spec, initial, val, cfg.baseline_config(method, seed), tcfg, labeling)


def run_cell(cfg: ExperimentConfig, method_name: str, seed: int, initial: Dataset, val: Dataset,
             test: Dataset, out_dir: Path, labeling_workers: int = 1) -> RunResult:
    method = parse_method(method_name)
    t0 = time.perf_counter()
    run = run_method(cfg, method, seed, initial, val, cfg.labeling(labeling_workers))
    partition = partition_test_set(test)
    report = subset_report(predict(run.model, test.coeffs), test, partition, run.train_set.freqs)
    stem = result_stem(method.value, seed)
    hist_path = write_history(run.history, Path(out_dir) / f"history_{stem}.jsonl", method.value)
    return RunResult(
        method=method.value,
        system=cfg.spec.system_id.value,
        seed=seed,
        metrics=_json_ready(report.to_dict()),
        final_train_size=len(run.train_set),
        initial_size=run.initial_size,
        new_labels=run.new_labels,
        eta=run.eta,
        history_path=hist_path.name,
        wall_ms=int(round(1000 * (time.perf_counter() - t0))),
        config_hash=cfg.config_hash(),
        extra=_json_ready(run.extra),
    )


def _cell_job(args):
    cfg_doc, method, seed, paths, out_dir = args
    cfg = ExperimentConfig(**cfg_doc)
    data = [load_dataset(p) for p in paths]
    return _guarded_cell(cfg, method, seed, *data, Path(out_dir))


def _guarded_cell(cfg, method, seed, initial, val, test, out_dir, labeling_workers=1):
    try:
        res = run_cell(cfg, method, seed, initial, val, test, out_dir, labeling_workers)
        path = Path(out_dir) / f"result_{result_stem(res.method, seed)}.json"
        _atomic_write(path, json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n")
        return res.to_dict(), None
    except Exception as exc:  # a failing cell must not abort the sweep
        log.error("cell %s seed %d failed: %s", method, seed, exc)
        return None, {"method": method, "seed": seed, "error": f"{type(exc).__name__}: {exc}",
                      "traceback": traceback.format_exc()}


@dataclass
class SweepOutcome:
    results: list[RunResult]
    failures: list[dict]
    out_dir: Path
    cache: DatasetCache


def run_experiment(cfg: ExperimentConfig, out_dir=None, cache_dir=None, workers: int | None = None) -> SweepOutcome:
    """Every (method, seed) cell of ``cfg``; writes result JSONs, histories and the aggregate CSV."""
    workers = cfg.workers if workers is None else workers
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = DatasetCache(resolve_cache_dir(cache_dir, cfg))
    ds = cfg.resolved_data_seeds()
    initial = cache.get(cfg, cfg.n_initial, ds["initial"], workers)
    val = cache.get(cfg, cfg.n_val, ds["val"], workers)
    test = cache.get(cfg, cfg.n_test, ds["test"], workers)
    log.info("datasets ready (%d cache hits, %d generated)", cache.hits, cache.misses)
    _atomic_write(out / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    cells = [(m, s) for m in cfg.methods for s in cfg.seeds]
    outcomes = []
    if workers > 1 and len(cells) > 1:
        lh = cfg.labeling_hash()
        sid = cfg.spec.system_id.value
        paths = [str(cache.path_for(sid, n, seed, lh)) for n, seed in
                 ((cfg.n_initial, ds["initial"]), (cfg.n_val, ds["val"]), (cfg.n_test, ds["test"]))]
        jobs = [(cfg.to_dict(), m, s, paths, str(out)) for m, s in cells]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_job, jobs))
    else:
        for m, s in cells:
            outcomes.append(_guarded_cell(cfg, m, s, initial, val, test, out, workers))

    results = [RunResult.from_dict(r) for r, _ in outcomes if r is not None]
    failures = [f for _, f in outcomes if f is not None]
    if failures:
        _atomic_write(out / "failures.json", json.dumps(failures, indent=2) + "\n")
    write_aggregate(results, out / "aggregate.csv")
    return SweepOutcome(results, failures, out, cache)


def _mean_std(values) -> tuple[float, float]:
    vals = [v for v in values if v is not None]
    if not vals:
        return math.nan, math.nan
    arr = np.asarray(vals, dtype=float)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else math.nan
    return float(arr.mean()), std


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.10g}"


AGGREGATE_HEADER = (
    ["system", "method", "n_seeds"]
    + [f"{s}_rmse_{stat}" for s in SUBSETS for stat in ("mean", "std")]
    + ["ir_mean", "ir_std", "gi_mean", "gi_std", "eta", "final_train_size"]
)


def aggregate_rows(results: list[RunResult]) -> list[list[str]]:
    """One row per (system, method): mean and sample std over seeds."""
    groups: dict[tuple[str, str], list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.system, r.method), []).append(r)
    order = {m: i for i, m in enumerate(ALL_METHODS)}
    rows = []
    for (system, method), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], order.get(kv[0][1], 99))):
        row = [system, method, str(len(rs))]
        for s in SUBSETS:
            row += [_fmt(v) for v in _mean_std([r.metrics["rmse"][s] for r in rs])]
        for key in ("ir", "gi"):
            row += [_fmt(v) for v in _mean_std([r.metrics[key] for r in rs])]
        row += [_fmt(_mean_std([r.eta for r in rs])[0]), _fmt(_mean_std([r.final_train_size for r in rs])[0])]
        rows.append(row)
    return rows


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_aggregate(results: list[RunResult], path) -> Path:
    path = Path(path)
    _atomic_write(path, _csv_text(AGGREGATE_HEADER, aggregate_rows(results)))
    return path


def load_results(result_dir) -> list[RunResult]:
    out = []
    for p in sorted(Path(result_dir).rglob("result_*.json")):
        doc = json.loads(p.read_text())
        if doc.get("format") == RESULT_FORMAT:
            out.append(RunResult.from_dict(doc))
    return out


PLOT_HEADER = ["system", "method", "subset", "seed", "rmse"]


def compare(result_dir, out_dir=None) -> list[Path]:
    """Per-system method x subset tables plus long-format plot data."""
    results = load_results(result_dir)
    if not results:
        raise FileNotFoundError(f"no result files under {result_dir}")
    out = Path(out_dir or result_dir)
    written = []
    for system in sorted({r.system for r in results}):
        rows = aggregate_rows([r for r in results if r.system == system])
        path = out / f"compare_{system}.csv"
        _atomic_write(path, _csv_text(AGGREGATE_HEADER, rows))
        written.append(path)
    plot_rows = [
        [r.system, r.method, s, str(r.seed), _fmt(r.metrics["rmse"][s])]
        for r in sorted(results, key=lambda r: (r.system, r.method, r.seed))
        for s in SUBSETS
    ]
    path = out / "plot_data.csv"
    _atomic_write(path, _csv_text(PLOT_HEADER, plot_rows))
    written.append(path)
    return written
