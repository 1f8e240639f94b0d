import csv
import hashlib
import json
import logging

import numpy as np
import pytest

from hggs_lab import harness
from hggs_lab.baselines import RUNNERS, Method
from hggs_lab.cli import main

TINY_TRAIN = {"epochs_per_stage": 8, "warm_epochs": 2, "hidden": [8], "dtype": "float32"}


def tiny_config(tmp_path, **over):
    doc = {
        "system": "brusselator",
        "n_initial": 60,
        "n_val": 30,
        "n_test": 60,
        "seeds": [1],
        "methods": ["LHS-only"],
        "sampler": {"m_c": 2},
        "train": dict(TINY_TRAIN),
        "out_dir": str(tmp_path / "out"),
        "cache_dir": str(tmp_path / "cache"),
    }
    doc.update(over)
    return doc


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- generate --------------------------------------------------------------

def test_generate_writes_csv_with_header(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["generate", "--system", "brusselator", "--n", "100", "--seed", "1", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["lambda_1", "lambda_2", "frequency"]
    assert len(rows) == 101
    side = json.loads(out.with_suffix(".json").read_text())
    assert side["system"] == "brusselator" and side["seed"] == 1 and "failure_count" in side


def test_generate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["generate", "--system", "mpf", "--n", "20", "--seed", "3", "--out", str(p)]) == 0
    assert sha(a) == sha(b)
    assert sha(a.with_suffix(".json")) == sha(b.with_suffix(".json"))


def test_generate_unknown_system_is_usage_error(capsys):
    assert main(["generate", "--system", "unknown", "--n", "5"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error():
    assert main([]) == 2


# --- configuration ---------------------------------------------------------

def test_schema_errors_list_paths(tmp_path, capsys):
    doc = tiny_config(tmp_path, seeds=[], n_initial=-5, bogus=1)
    doc["train"]["dtype"] = "float16"
    assert main(["run", "--config", str(write_config(tmp_path, doc))]) == 2
    err = capsys.readouterr().err
    assert "seeds" in err and "n_initial" in err and "train/dtype" in err and "bogus" in err


def test_consistency_errors(tmp_path):
    doc = tiny_config(tmp_path, methods=["US-P"], sampler={"m_c": 7})
    with pytest.raises(harness.ConfigError) as exc:
        harness.ExperimentConfig.from_dict(doc)
    assert any("US-P" in e for e in exc.value.errors)


def test_presets_validate():
    for name, fn in harness.PRESETS.items():
        for system in ("brusselator", "cell_cycle", "mpf", "activator_inhibitor"):
            cfg = harness.ExperimentConfig.from_dict(fn(system))
            assert cfg.seeds
    desk = harness.ExperimentConfig.from_dict(harness.desk_preset("brusselator"))
    assert desk.n_initial == 2000 and desk.n_test == 5000
    res = desk.sampler_config(0).resolve(desk.n_initial)
    assert (res.n_f, res.n_s, res.cfg.m_c) == (1000, 1000, 10)
    assert desk.train_config(0).epochs_per_stage == 600
    assert harness.ExperimentConfig.from_dict(harness.desk_preset("cell_cycle")).train_config(0).learning_rate == 2.5e-3


def test_config_hash_ignores_paths(tmp_path):
    a = harness.ExperimentConfig.from_dict(tiny_config(tmp_path))
    b = harness.ExperimentConfig.from_dict(tiny_config(tmp_path, out_dir="elsewhere", workers=3))
    c = harness.ExperimentConfig.from_dict(tiny_config(tmp_path, seeds=[2]))
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_cache_root_precedence(tmp_path, monkeypatch):
    cfg = harness.ExperimentConfig.from_dict(tiny_config(tmp_path))
    monkeypatch.setenv(harness.CACHE_ENV, str(tmp_path / "env"))
    assert harness.resolve_cache_dir("flag", cfg).name == "flag"
    assert harness.resolve_cache_dir(None, cfg).name == "env"
    monkeypatch.delenv(harness.CACHE_ENV)
    assert harness.resolve_cache_dir(None, cfg).name == "cache"


# --- run -------------------------------------------------------------------

def test_single_cell_run(tmp_path):
    cfg_path = write_config(tmp_path, tiny_config(tmp_path))
    assert main(["run", "--config", str(cfg_path)]) == 0
    out = tmp_path / "out"
    results = sorted(out.glob("result_*.json"))
    assert len(results) == 1
    doc = json.loads(results[0].read_text())
    cfg = harness.ExperimentConfig.load(cfg_path)
    assert doc["config_hash"] == cfg.config_hash()
    assert doc["eta"] == 1.0 and doc["final_train_size"] == 60
    assert set(doc["metrics"]["rmse"]) == {"overall", "majority", "minority", "boundary"}
    rows = read_csv(out / "aggregate.csv")
    assert rows[0] == harness.AGGREGATE_HEADER and len(rows) == 2
    assert (out / "history_LHS-only_seed1.jsonl").exists()


def test_rerun_hits_cache_for_every_dataset(tmp_path, caplog):
    cfg = harness.ExperimentConfig.from_dict(tiny_config(tmp_path))
    first = harness.run_experiment(cfg)
    assert first.cache.misses == 3
    with caplog.at_level(logging.INFO, logger="hggs_lab.harness"):
        second = harness.run_experiment(cfg)
    assert second.cache.hits == 3 and second.cache.misses == 0
    assert caplog.text.count("cache hit: ") == 3


def test_seed_aggregation_uses_sample_std(tmp_path):
    cfg = harness.ExperimentConfig.from_dict(tiny_config(tmp_path, seeds=[0, 1, 2, 3, 4]))
    outcome = harness.run_experiment(cfg)
    vals = [r.metrics["rmse"]["overall"] for r in outcome.results]
    assert len(vals) == 5
    row = read_csv(outcome.out_dir / "aggregate.csv")[1]
    header = harness.AGGREGATE_HEADER
    assert float(row[header.index("overall_rmse_mean")]) == pytest.approx(np.mean(vals), rel=1e-9)
    assert float(row[header.index("overall_rmse_std")]) == pytest.approx(np.std(vals, ddof=1), rel=1e-9)
    assert row[header.index("n_seeds")] == "5"


def test_same_seed_gives_identical_metrics(tmp_path):
    doc = tiny_config(tmp_path, methods=["HGGS", "US-S", "WRS", "IS"], sampler={"m_c": 2, "n_f": 30, "n_s": 30})
    cfg = harness.ExperimentConfig.from_dict(doc)
    a = harness.run_experiment(cfg, out_dir=tmp_path / "a")
    b = harness.run_experiment(cfg, out_dir=tmp_path / "b")
    for ra, rb in zip(a.results, b.results):
        assert json.dumps(ra.metrics, sort_keys=True) == json.dumps(rb.metrics, sort_keys=True)
        assert ra.eta == rb.eta
    etas = {r.method: r.eta for r in a.results}
    assert etas == {"HGGS": 2 / 3, "US-S": 2 / 3, "WRS": 2 / 3, "IS": 1.0}
    for r in a.results:
        assert r.eta == r.final_train_size / (r.initial_size + r.new_labels)


def test_failing_cell_is_recorded_and_skipped(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("synthetic failure")

    monkeypatch.setitem(RUNNERS, Method.IS, boom)
    doc = tiny_config(tmp_path, methods=["IS", "LHS-only"])
    assert main(["run", "--config", str(write_config(tmp_path, doc))]) == 1
    out = tmp_path / "out"
    failures = json.loads((out / "failures.json").read_text())
    assert failures[0]["method"] == "IS" and "synthetic failure" in failures[0]["error"]
    assert len(list(out.glob("result_*.json"))) == 1


def test_run_flag_overrides(tmp_path):
    cfg_path = write_config(tmp_path, tiny_config(tmp_path, seeds=[1, 2]))
    code = main(["run", "--config", str(cfg_path), "--seed", "5", "--out", str(tmp_path / "o2"),
                 "--cache", str(tmp_path / "c2")])
    assert code == 0
    assert [p.name for p in (tmp_path / "o2").glob("result_*.json")] == ["result_LHS-only_seed5.json"]
    assert len(list((tmp_path / "c2").glob("*.csv"))) == 3


# --- compare ---------------------------------------------------------------

def _fake_result(system, method, seed, value):
    return harness.RunResult(
        method=method, system=system, seed=seed,
        metrics={"rmse": {s: value for s in ("overall", "majority", "minority", "boundary")},
                 "sizes": {}, "ir": 1.0, "gi": 0.5},
        final_train_size=10, initial_size=10, new_labels=0, eta=1.0,
        history_path="h.jsonl", wall_ms=1, config_hash="x",
    )


def _write_results(directory, results):
    directory.mkdir(parents=True, exist_ok=True)
    for r in results:
        (directory / f"result_{r.system}_{r.method}_{r.seed}.json").write_text(json.dumps(r.to_dict()))


def test_compare_single_result(tmp_path):
    _write_results(tmp_path / "r", [_fake_result("mpf", "HGGS", 0, 0.1)])
    assert main(["compare", str(tmp_path / "r")]) == 0
    rows = read_csv(tmp_path / "r" / "compare_mpf.csv")
    assert len(rows) == 2
    plot = read_csv(tmp_path / "r" / "plot_data.csv")
    assert plot[0] == ["system", "method", "subset", "seed", "rmse"] and len(plot) == 1 + 4


def test_compare_mixed_systems(tmp_path):
    results = [_fake_result(s, m, seed, 0.1 * seed)
               for s in ("mpf", "brusselator") for m in ("HGGS", "LHS-only") for seed in (0, 1)]
    _write_results(tmp_path / "r", results)
    paths = harness.compare(tmp_path / "r", tmp_path / "cmp")
    names = sorted(p.name for p in paths)
    assert names == ["compare_brusselator.csv", "compare_mpf.csv", "plot_data.csv"]
    assert len(read_csv(tmp_path / "cmp" / "plot_data.csv")) == 1 + len(results) * 4
    assert len(read_csv(tmp_path / "cmp" / "compare_mpf.csv")) == 3


def test_compare_empty_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["compare", str(tmp_path / "empty")]) == 1
