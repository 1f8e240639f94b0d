"""Command line: ``hggs-lab generate | run | compare``.

Exit codes: 0 success, 1 run error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .ode_lab.dataset import generate_dataset, save_dataset
from .ode_lab.systems import SYSTEMS, get_system

EXIT_OK, EXIT_RUN_ERROR, EXIT_USAGE = 0, 1, 2


def _system_name(value: str) -> str:
    try:
        return get_system(value).system_id.value
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown system {value!r} (choose from {', '.join(sorted(SYSTEMS))})"
        ) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hggs-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="label an LHS sample by simulation and write CSV + sidecar")
    g.add_argument("--system", type=_system_name, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="CSV path (default <system>_n<n>_seed<seed>.csv)")
    g.add_argument("--workers", type=int, default=1)

    r = sub.add_parser("run", help="run every (method, seed) cell of an experiment config")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="experiment JSON")
    src.add_argument("--preset", choices=sorted(harness.PRESETS), help="built-in preset (needs --system)")
    r.add_argument("--system", type=_system_name, help="override or choose the system")
    r.add_argument("--n", type=int, help="override the initial training-set size")
    r.add_argument("--seed", type=int, action="append", help="run only these seeds (repeatable)")
    r.add_argument("--method", action="append", help="run only these methods (repeatable)")
    r.add_argument("--out", help="result directory")
    r.add_argument("--cache", help=f"dataset cache (default ${harness.CACHE_ENV} or the config value)")
    r.add_argument("--workers", type=int)

    c = sub.add_parser("compare", help="tables and plot data from a result directory")
    c.add_argument("result_dir")
    c.add_argument("--out", help="output directory (default: the result directory)")

    s = sub.add_parser("schema", help="print the experiment config JSON schema")
    s.add_argument("--preset", choices=sorted(harness.PRESETS), help="print a preset config instead")
    s.add_argument("--system", type=_system_name, default="brusselator")
    return p


def _cmd_generate(args) -> int:
    spec = get_system(args.system)
    if args.n < 1:
        print("hggs-lab generate: --n must be positive", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or f"{spec.system_id.value}_n{args.n}_seed{args.seed}.csv")
    ds = generate_dataset(spec, args.n, args.seed, workers=args.workers)
    try:
        save_dataset(ds, out)
    except OSError as exc:
        print(f"hggs-lab generate: cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR
    print(f"wrote {out} ({len(ds)} rows, {ds.provenance['failure_count']} integration failures)")
    return EXIT_OK


def _load_config(args) -> harness.ExperimentConfig:
    if args.config:
        doc = json.loads(Path(args.config).read_text())
    else:
        if not args.system:
            raise harness.ConfigError(["--preset needs --system"])
        doc = harness.PRESETS[args.preset](args.system)
    if args.system:
        doc["system"] = args.system
    if args.n:
        doc["n_initial"] = args.n
    if args.seed:
        doc["seeds"] = args.seed
    if args.method:
        doc["methods"] = args.method
    return harness.ExperimentConfig.from_dict(doc)


def _cmd_run(args) -> int:
    try:
        cfg = _load_config(args)
    except harness.ConfigError as exc:
        print(f"hggs-lab run: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"hggs-lab run: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    outcome = harness.run_experiment(cfg, args.out, args.cache, args.workers)
    print(f"{len(outcome.results)} cells done, {len(outcome.failures)} failed; "
          f"cache hits {outcome.cache.hits}; results in {outcome.out_dir}")
    return EXIT_RUN_ERROR if outcome.failures else EXIT_OK


def _cmd_compare(args) -> int:
    try:
        paths = harness.compare(args.result_dir, args.out)
    except FileNotFoundError as exc:
        print(f"hggs-lab compare: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_schema(args) -> int:
    doc = harness.PRESETS[args.preset](args.system) if args.preset else harness.CONFIG_SCHEMA
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler = {"generate": _cmd_generate, "run": _cmd_run, "compare": _cmd_compare, "schema": _cmd_schema}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
