"""Coefficient sampling, ground-truth labeling and dataset persistence."""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .frequency import FrequencyConfig, oscillatory_frequency, window_is_settled
from .integrator import IntegrationConfig, IntegrationError, integrate
from .systems import NumericDomainError, SystemSpec, get_system

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledSample:
    coeffs: np.ndarray
    frequency: float


@dataclass
class Dataset:
    """Coefficient matrix (N x D, model units) with aligned frequency labels."""

    system_id: str
    coeffs: np.ndarray
    freqs: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float).reshape(-1)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 2:
            self.coeffs = self.coeffs.reshape(len(self.freqs), -1)
        if self.coeffs.shape[0] != self.freqs.shape[0]:
            raise ValueError("coefficients and labels differ in length")

    def __len__(self) -> int:
        return int(self.freqs.shape[0])

    def __iter__(self) -> Iterator[LabeledSample]:
        for c, y in zip(self.coeffs, self.freqs):
            yield LabeledSample(c, float(y))

    @property
    def spec(self) -> SystemSpec:
        return get_system(self.system_id)

    def subset(self, idx, tag: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        prov = dict(self.provenance)
        if tag:
            prov["generator"] = tag
        return Dataset(self.system_id, self.coeffs[idx], self.freqs[idx], prov)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.system_id != self.system_id:
            raise ValueError("cannot merge datasets from different systems")
        return Dataset(
            self.system_id,
            np.vstack([self.coeffs, other.coeffs]) if len(other) else self.coeffs.copy(),
            np.concatenate([self.freqs, other.freqs]),
            dict(self.provenance),
        )

    @classmethod
    def empty(cls, spec: SystemSpec) -> "Dataset":
        return cls(spec.system_id.value, np.empty((0, spec.coeff_dim)), np.empty(0))


def lhs_generate(spec: SystemSpec, n: int, seed: int) -> np.ndarray:
    """Classic Latin hypercube over the coefficient box, shape (n, D)."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    d = spec.coeff_dim
    unit = np.empty((n, d))
    for j in range(d):
        strata = rng.permutation(n)
        unit[:, j] = (strata + rng.random(n)) / n
    return spec.denormalize(unit)


def label_one(
    spec: SystemSpec,
    coeffs,
    int_cfg: IntegrationConfig | None = None,
    freq_cfg: FrequencyConfig | None = None,
) -> float:
    """Simulate one coefficient vector and return its oscillatory frequency.

    Raises the integrator's errors; ``label_batch`` turns them into y = 0.
    """
    int_cfg = int_cfg or IntegrationConfig()
    freq_cfg = freq_cfg or FrequencyConfig()
    traj = integrate(spec, coeffs, int_cfg)
    y = oscillatory_frequency(traj, freq_cfg)
    factor = 2
    while (
        y == 0.0
        and spec.allow_horizon_extension
        and factor <= freq_cfg.max_horizon_factor
        and not window_is_settled(traj, freq_cfg)
    ):
        try:
            traj = integrate(
                spec, coeffs, int_cfg,
                t_end=factor * spec.t_end,
                output_grid_size=factor * (int_cfg.output_grid_size - 1) + 1,
            )
        except (IntegrationError, NumericDomainError):
            break
        y = oscillatory_frequency(traj, freq_cfg)
        factor *= 2
    return y


_LABEL_ERRORS = (IntegrationError, NumericDomainError, ZeroDivisionError, FloatingPointError)


def _label_chunk(args) -> tuple[list[float], list[int]]:
    system_id, chunk, offset, int_cfg, freq_cfg = args
    spec = get_system(system_id)
    ys, failed = [], []
    for k, c in enumerate(chunk):
        try:
            ys.append(float(label_one(spec, c, int_cfg, freq_cfg)))
        except _LABEL_ERRORS as exc:
            log.debug("sample %d failed: %s", offset + k, exc)
            ys.append(0.0)
            failed.append(offset + k)
    return ys, failed


def label_batch(
    spec: SystemSpec,
    coeffs_list,
    int_cfg: IntegrationConfig | None = None,
    freq_cfg: FrequencyConfig | None = None,
    master_seed: int = 0,
    workers: int = 1,
    generator: str = "lhs",
) -> Dataset:
    """Label every coefficient vector by simulation, preserving input order.

    Integration failures become y = 0 and are counted in the provenance.
    """
    int_cfg = int_cfg or IntegrationConfig()
    freq_cfg = freq_cfg or FrequencyConfig()
    coeffs = np.asarray(coeffs_list, dtype=float).reshape(-1, spec.coeff_dim)
    if len(coeffs) and not np.all(spec.contains(coeffs)):
        raise ValueError("coefficients outside the system's box")
    n = len(coeffs)
    n_chunks = max(1, min(n, 8 * workers)) if n else 0
    bounds = np.linspace(0, n, n_chunks + 1).astype(int) if n else []
    jobs = [
        (spec.system_id.value, coeffs[a:b], int(a), int_cfg, freq_cfg)
        for a, b in zip(bounds[:-1], bounds[1:])
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_label_chunk, jobs))
    else:
        results = [_label_chunk(j) for j in jobs]
    ys = [y for r in results for y in r[0]]
    failed = [i for r in results for i in r[1]]
    if failed:
        log.warning("%s: %d of %d samples failed to integrate", spec.system_id.value, len(failed), n)
    provenance = {
        "system": spec.system_id.value,
        "seed": int(master_seed),
        "generator": generator,
        "integration": dataclasses.asdict(int_cfg),
        "frequency": dataclasses.asdict(freq_cfg),
        "failure_count": len(failed),
        "failed_indices": failed,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return Dataset(spec.system_id.value, coeffs, np.asarray(ys, dtype=float), provenance)


# Sidecar keys; the timestamp stays in memory so regenerated files are byte-identical.
SIDECAR_KEYS = ("system", "seed", "generator", "integration", "frequency", "failure_count")


def csv_header(dim: int) -> list[str]:
    return [f"lambda_{i + 1}" for i in range(dim)] + ["frequency"]


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_dataset(ds: Dataset, path: str | os.PathLike) -> Path:
    """Write ``path`` (CSV) and ``path`` with suffix ``.json`` (provenance)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = ds.spec.coeff_dim
    lines = [",".join(csv_header(dim))]
    for c, y in zip(ds.coeffs, ds.freqs):
        lines.append(",".join(f"{v:.17g}" for v in (*c, y)))
    _atomic_write_text(path, "\n".join(lines) + "\n")
    side = {k: ds.provenance.get(k) for k in SIDECAR_KEYS}
    side["system"] = ds.system_id
    side["n"] = len(ds)
    _atomic_write_text(sidecar_path(path), json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def sidecar_path(path: str | os.PathLike) -> Path:
    return Path(path).with_suffix(".json")


def load_dataset(path: str | os.PathLike) -> Dataset:
    path = Path(path)
    side = sidecar_path(path)
    provenance = json.loads(side.read_text()) if side.exists() else {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "frequency" or not all(h == f"lambda_{i + 1}" for i, h in enumerate(header[:-1])):
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.array(body, dtype=float).reshape(-1, len(header))
    system = provenance.get("system")
    if system is None:
        raise ValueError(f"{path}: provenance sidecar missing")
    return Dataset(system, data[:, :-1], data[:, -1], provenance)


def generate_dataset(
    spec: SystemSpec,
    n: int,
    seed: int,
    int_cfg: IntegrationConfig | None = None,
    freq_cfg: FrequencyConfig | None = None,
    workers: int = 1,
) -> Dataset:
    return label_batch(spec, lhs_generate(spec, n, seed), int_cfg, freq_cfg, seed, workers)


def merge_datasets(parts: Sequence[Dataset]) -> Dataset:
    out = parts[0]
    for p in parts[1:]:
        out = out.concat(p)
    return out
