"""Experiment configuration files (JSON)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .systems import SystemConfig


@dataclass
class DatasetConfig:
    name: str
    path: Path
    schema_path: Path
    item_clustering: dict | None = None
    user_clustering: dict | None = None

    @classmethod
    def from_dict(cls, d: Mapping, base: Path) -> "DatasetConfig":
        for key in ("path", "schema"):
            if key not in d:
                raise ConfigError(f"dataset entry lacks {key!r}")
        path = _resolve(d["path"], base)
        clustering = d.get("clustering", {})
        return cls(
            name=d.get("name", path.stem),
            path=path,
            schema_path=_resolve(d["schema"], base),
            item_clustering=_resolve_cluster(clustering.get("item"), base),
            user_clustering=_resolve_cluster(clustering.get("user"), base),
        )


@dataclass
class ExperimentConfig:
    datasets: list[DatasetConfig]
    systems: list[SystemConfig]
    folds: int = 5
    repetitions: int = 5
    stratify: str | None = None
    seed: int = 0
    output: Path = Path("results")
    workers: int = 1
    reference: str | None = "mf"
    alpha: float = 0.05
    dump_errors: bool = False
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping, base: Path = Path(".")) -> "ExperimentConfig":
        known = {"dataset", "datasets", "systems", "system_defaults", "folds", "repetitions", "stratify",
                 "seed", "output", "workers", "reference", "alpha", "dump_errors"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        raw_ds = d.get("datasets") or ([d["dataset"]] if "dataset" in d else [])
        if not raw_ds:
            raise ConfigError("config names no dataset")
        datasets = [DatasetConfig.from_dict(x, base) for x in raw_ds]
        defaults = d.get("system_defaults", {})
        raw_sys = d.get("systems", [])
        if not raw_sys:
            raise ConfigError("config lists no systems")
        systems = [SystemConfig.from_dict({"name": s} if isinstance(s, str) else s, defaults) for s in raw_sys]
        names = [s.name for s in systems]
        if len(set(names)) != len(names):
            raise ConfigError("system names must be unique")
        folds = int(d.get("folds", 5))
        reps = int(d.get("repetitions", 5))
        if folds < 2 or reps < 1:
            raise ConfigError("need folds >= 2 and repetitions >= 1")
        return cls(
            datasets=datasets,
            systems=systems,
            folds=folds,
            repetitions=reps,
            stratify=d.get("stratify"),
            seed=int(d.get("seed", 0)),
            output=_resolve(d.get("output", "results"), base),
            workers=int(d.get("workers", 1)),
            reference=d.get("reference", "mf"),
            alpha=float(d.get("alpha", 0.05)),
            dump_errors=bool(d.get("dump_errors", False)),
        )


def _resolve(p: str | PathLike, base: Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _resolve_cluster(spec: Any, base: Path) -> dict | None:
    if spec is None:
        return None
    spec = dict(spec)
    if "path" in spec:
        spec["path"] = _resolve(spec["path"], base)
    return spec


def read_json(path: str | PathLike) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")


def load_experiment(path: str | PathLike) -> ExperimentConfig:
    path = Path(path)
    return ExperimentConfig.from_dict(read_json(path), path.parent)
