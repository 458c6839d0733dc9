"""Named recommender systems evaluated side by side.

Every system wraps the same biased MF: context-free systems train one model
on the training fold, pre-filtering systems train one local model per test
situation on the ratings their selector keeps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .baselines import DspfConfig, dspf_influence_matrix
from .context import STRATEGIES
from .dataset import Dataset
from .errors import ConfigError
from .influence import InfluenceMode, influence_matrix
from .prefilter import LocalSelector, binary_representer, influence_representer
from .preprocess import ClusterAssignment
from .recommender import MfHyperparams, MfModel, train_mf

_log = logging.getLogger(__name__)

# kind -> (family, influence basis, default strategy)
KINDS: dict[str, tuple[str, str | None, str | None]] = {
    "mf": ("mf", None, None),
    "exact_pf": ("exact", None, None),
    "binary_pf": ("binary", None, None),
    "dspf_ib": ("dspf", "item", "aggregation"),
    "dspf_ub": ("dspf", "user", "aggregation"),
    "cbpf_ib": ("cbpf", "item", "aggregation"),
    "cbpf_ub": ("cbpf", "user", "aggregation"),
    "cbpf_cib_ag": ("cbpf", "item_cluster", "aggregation"),
    "cbpf_cib_cn": ("cbpf", "item_cluster", "concatenation"),
    "cbpf_cub_ag": ("cbpf", "user_cluster", "aggregation"),
    "cbpf_cub_cn": ("cbpf", "user_cluster", "concatenation"),
}


@dataclass(frozen=True)
class SystemConfig:
    name: str
    kind: str = ""
    threshold: float = 0.5
    strategy: str | None = None
    mf: MfHyperparams = field(default_factory=MfHyperparams)
    dspf: DspfConfig | None = None
    min_local_size: int = 10
    unknown_as_zero: bool = False

    def __post_init__(self):
        if not self.kind:
            object.__setattr__(self, "kind", self.name)
        if self.kind not in KINDS:
            raise ConfigError(f"unknown system {self.kind!r}; expected one of {sorted(KINDS)}")
        family, basis, default_strategy = KINDS[self.kind]
        if self.strategy is None and default_strategy is not None:
            object.__setattr__(self, "strategy", default_strategy)
        if self.strategy is not None and self.strategy not in STRATEGIES:
            raise ConfigError(f"{self.name}: unknown strategy {self.strategy!r}")
        if family == "dspf":
            dspf = self.dspf or DspfConfig(basis=basis)
            object.__setattr__(self, "dspf", replace(dspf, basis=basis))
        if not -1.0 <= self.threshold <= 1.0:
            raise ConfigError(f"{self.name}: threshold {self.threshold} outside [-1, 1]")
        if self.min_local_size < 1:
            raise ConfigError(f"{self.name}: min_local_size must be >= 1")

    @property
    def family(self) -> str:
        return KINDS[self.kind][0]

    @property
    def basis(self) -> str | None:
        return KINDS[self.kind][1]

    @classmethod
    def from_dict(cls, d: Mapping, defaults: Mapping | None = None) -> "SystemConfig":
        merged = {**(defaults or {}), **d}
        known = {"name", "kind", "threshold", "strategy", "mf", "dspf", "min_local_size", "unknown_as_zero"}
        unknown = set(merged) - known
        if unknown:
            raise ConfigError(f"system {merged.get('name')!r}: unknown keys {sorted(unknown)}")
        if "name" not in merged:
            raise ConfigError("every system needs a name")
        try:
            mf = MfHyperparams(**merged.get("mf", {}))
            dspf = DspfConfig(**merged["dspf"]) if "dspf" in merged else None
        except TypeError as exc:
            raise ConfigError(f"system {merged['name']!r}: {exc}") from exc
        return cls(
            name=merged["name"],
            kind=merged.get("kind", ""),
            threshold=float(merged.get("threshold", 0.5)),
            strategy=merged.get("strategy"),
            mf=mf,
            dspf=dspf,
            min_local_size=int(merged.get("min_local_size", 10)),
            unknown_as_zero=bool(merged.get("unknown_as_zero", False)),
        )


class _ExactSelector:
    def __init__(self, train: Dataset):
        from .context import enumerate_situations

        self.groups = dict(enumerate_situations(train))

    def select(self, target) -> np.ndarray:
        return self.groups.get(tuple(int(c) for c in target), np.zeros(0, dtype=np.intp))


class System:
    """A trained-on-fit, predict-in-context recommender."""

    def __init__(self, cfg: SystemConfig, clusters: Mapping[str, ClusterAssignment], cache: dict | None = None):
        self.cfg = cfg
        self.clusters = clusters
        self.cache = cache if cache is not None else {}
        self.fallbacks = 0
        self.train: Dataset | None = None
        self.global_model: MfModel | None = None
        self.selector = None

    def fit(self, train: Dataset) -> "System":
        self.train = train
        key = ("global", self.cfg.mf)
        model = self.cache.get(key)
        if model is None:
            model = train_mf(train, np.arange(len(train)), self.cfg.mf)
            self.cache[key] = model
        self.global_model = model
        self.selector = self._make_selector(train)
        return self

    def _make_selector(self, train: Dataset):
        cfg = self.cfg
        family = cfg.family
        if family == "mf":
            return None
        if family == "exact":
            return _ExactSelector(train)
        if family == "binary":
            return LocalSelector(train, binary_representer(train.schema), cfg.threshold)
        if family == "dspf":
            values = dspf_influence_matrix(train, cfg.dspf).values
        else:
            basis = cfg.basis
            ca = None
            if basis.endswith("_cluster"):
                entity = basis.split("_")[0]
                ca = self.clusters.get(entity)
                if ca is None:
                    raise ConfigError(f"{cfg.name}: no {entity} clustering configured")
            mode = InfluenceMode(basis, ca, cfg.unknown_as_zero)
            values = influence_matrix(train, mode).values
        return LocalSelector(train, influence_representer(values, train.schema, cfg.strategy), cfg.threshold)

    def local_rows(self, target) -> np.ndarray:
        """Training rows of the local dataset for ``target`` (all rows for context-free MF)."""
        if self.selector is None:
            return np.arange(len(self.train))
        return self.selector.select(target)

    def predict(self, test: Dataset) -> np.ndarray:
        users = [test.users[u] for u in test.user_idx]
        items = [test.items[i] for i in test.item_idx]
        if self.selector is None:
            return self.global_model.predict_many(users, items)
        preds = np.empty(len(test))
        local_models: dict = {}
        codes = np.asarray(test.codes)
        keys, inverse = np.unique(codes, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        for s, key in enumerate(keys):
            rows = np.flatnonzero(inverse == s)
            local = self.selector.select(tuple(key))
            if len(local) < self.cfg.min_local_size:
                model = self.global_model
                self.fallbacks += len(rows)
            else:
                sig = local.tobytes()
                model = local_models.get(sig)
                if model is None:
                    model = train_mf(self.train, local, self.cfg.mf)
                    local_models[sig] = model
            preds[rows] = model.predict_many([users[t] for t in rows], [items[t] for t in rows])
        return preds


def build_system(cfg: SystemConfig, clusters: Mapping[str, ClusterAssignment] | None = None, cache: dict | None = None) -> System:
    return System(cfg, clusters or {}, cache)
