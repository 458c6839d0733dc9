"""Command-line front end: ``cbpf stats``, ``cbpf evaluate`` and ``cbpf synth``.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import synth
from .config import DatasetConfig, ExperimentConfig, load_experiment, read_json
from .dataset import Dataset, DatasetSchema, dataset_stats, load_dataset
from .errors import ConfigError, ValidationError
from .evaluation import (
    format_table,
    make_folds,
    results_table,
    run_experiment,
    table_csv,
    write_errors_csv,
    write_fold_csv,
    write_significance_csv,
)
from .preprocess import cluster_entities

_log = logging.getLogger("cbpf")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _load(dc: DatasetConfig) -> Dataset:
    schema = DatasetSchema.load(dc.schema_path)
    return load_dataset(dc.path, schema)


def _dataset_configs(path: Path) -> list[DatasetConfig]:
    raw = read_json(path)
    entries = raw.get("datasets") or ([raw["dataset"]] if "dataset" in raw else [])
    if not entries:
        raise ConfigError(f"{path}: config names no dataset")
    return [DatasetConfig.from_dict(e, path.parent) for e in entries]


def cmd_stats(config: Path, output: Path | None) -> int:
    parts = []
    for dc in _dataset_configs(config):
        report = dataset_stats(_load(dc))
        text = report.to_text()
        parts.append(f"== {dc.name} ==\n{text}")
        if output is not None:
            output.mkdir(parents=True, exist_ok=True)
            (output / f"stats_{dc.name}.txt").write_text(text)
            (output / f"stats_{dc.name}.csv").write_text(report.to_csv())
    sys.stdout.write("\n".join(parts))
    return EXIT_OK


def _clusters(d: Dataset, dc: DatasetConfig) -> dict:
    out = {}
    if dc.item_clustering is not None:
        out["item"] = cluster_entities(d, "item", dc.item_clustering)
    if dc.user_clustering is not None:
        out["user"] = cluster_entities(d, "user", dc.user_clustering)
    return out


def _check_clusters(cfg: ExperimentConfig) -> None:
    # fail on configuration before any training starts
    for dc in cfg.datasets:
        for s in cfg.systems:
            basis = s.basis or ""
            if basis == "item_cluster" and dc.item_clustering is None:
                raise ConfigError(f"system {s.name!r} needs an item clustering for dataset {dc.name!r}")
            if basis == "user_cluster" and dc.user_clustering is None:
                raise ConfigError(f"system {s.name!r} needs a user clustering for dataset {dc.name!r}")


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    _check_clusters(cfg)
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    failures = []
    for dc in cfg.datasets:
        d = _load(dc)
        clusters = _clusters(d, dc)
        for kind, ca in clusters.items():
            ca.to_csv(out / f"clusters_{dc.name}_{kind}.csv")
        plans = [make_folds(d, cfg.folds, cfg.seed + rep, cfg.stratify) for rep in range(cfg.repetitions)]
        reports = run_experiment(d, cfg.systems, plans, clusters, workers=cfg.workers, keep_going=True)
        for r in reports:
            if r.failure is not None:
                failures.append(f"{dc.name}: {r.failure}")
        ok = [r for r in reports if r.failure is None]
        results[dc.name] = ok
        if cfg.dump_errors and ok:
            write_errors_csv(out / f"errors_{dc.name}.csv", d, ok)

    reference = cfg.reference
    if reference and not any(r.system == reference for reps in results.values() for r in reps):
        reference = None
    header, rows = results_table(results, reference, cfg.alpha)
    table = format_table(header, rows)
    (out / "report.txt").write_text(table)
    (out / "report.csv").write_text(table_csv(header, rows))
    write_fold_csv(out / "folds.csv", results)
    write_significance_csv(out / "significance.csv", results, cfg.alpha)
    sys.stdout.write(table)
    if failures:
        (out / "failures.txt").write_text("\n".join(failures) + "\n")
        sys.stderr.write(f"{len(failures)} system(s) failed:\n" + "\n".join(failures) + "\n")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_synth(config: Path | None, output: Path, seed: int | None) -> int:
    raw = read_json(config) if config is not None else {}
    if seed is not None:
        raw = {**raw, "seed": seed}
    params = synth.SynthParams.from_dict(raw)
    paths = synth.write(synth.generate(params), output)
    sys.stdout.write("".join(f"{k}: {v}\n" for k, v in paths.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbpf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("stats", help="descriptive statistics of the configured datasets")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--output", type=Path)
    p = sub.add_parser("evaluate", help="cross-validated comparison of the configured systems")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--output", type=Path)
    p.add_argument("--seed", type=int)
    p = sub.add_parser("synth", help="generate a synthetic contextual rating dataset")
    p.add_argument("--config", type=Path, help="JSON generator parameters (defaults if omitted)")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--seed", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "stats":
            return cmd_stats(args.config, args.output)
        if args.command == "evaluate":
            cfg = load_experiment(args.config)
            if args.output is not None:
                cfg = replace(cfg, output=args.output)
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
            return cmd_evaluate(cfg)
        return cmd_synth(args.config, args.output, args.seed)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level report
        _log.debug("failure", exc_info=True)
        sys.stderr.write(f"failure: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
