"""Local dataset selection: keep training ratings given in situations similar to a target."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .context import cosine_to, enumerate_situations, represent_many, SituationKey
from .dataset import Dataset, DatasetSchema, codes_to_bits
from .errors import EmptyLocalDataset, ValidationError
from .influence import InfluenceMatrix, InfluenceMode


@dataclass(frozen=True)
class PrefilterConfig:
    similarity_threshold: float = 0.5
    strategy: str = "concatenation"
    mode: InfluenceMode = field(default_factory=InfluenceMode)

    def __post_init__(self):
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise ValidationError(f"similarity threshold {self.similarity_threshold} outside [-1, 1]")


Representer = Callable[[np.ndarray], np.ndarray]


def influence_representer(values: np.ndarray, schema: DatasetSchema, strategy: str) -> Representer:
    return lambda keys: represent_many(keys, values, schema, strategy)


def binary_representer(schema: DatasetSchema) -> Representer:
    """Raw condition bits as the situation vector."""
    return lambda keys: np.vstack([codes_to_bits(k, schema) for k in np.atleast_2d(keys)]).astype(np.float64)


class LocalSelector:
    """Similarity-threshold selection over one training set.

    The training situations and their vectors are computed once; selections
    are memoized per target key. ``threshold`` may exceed 1 here, which
    selects nothing.
    """

    def __init__(self, train: Dataset, represent: Representer, threshold: float):
        self.train = train
        self.represent = represent
        self.threshold = threshold
        groups = enumerate_situations(train)
        self.keys = [k for k, _ in groups]
        self.members = [ix for _, ix in groups]
        self.key_pos = {k: s for s, k in enumerate(self.keys)}
        n_f = train.schema.n_factors
        self.vectors = represent(np.asarray(self.keys, dtype=np.intp).reshape(-1, n_f)) if self.keys else None
        self._cache: dict = {}
        self._lock = threading.Lock()

    def similarities(self, target: SituationKey) -> np.ndarray:
        """Similarity of every training situation to ``target``; exact matches score 1."""
        target = tuple(int(c) for c in target)
        if not self.keys:
            return np.zeros(0)
        tvec = self.represent(np.asarray([target], dtype=np.intp))[0]
        sims = cosine_to(tvec, self.vectors)
        if target in self.key_pos:
            sims[self.key_pos[target]] = 1.0
        return sims

    def select(self, target: SituationKey) -> np.ndarray:
        """Sorted training-row positions (into ``train``) of the local dataset."""
        target = tuple(int(c) for c in target)
        hit = self._cache.get(target)
        if hit is not None:
            return hit
        sims = self.similarities(target)
        chosen = [self.members[s] for s in np.flatnonzero(sims >= self.threshold)]
        rows = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.intp)
        with self._lock:
            self._cache.setdefault(target, rows)
        return rows


def build_local_dataset(
    d: Dataset, target: SituationKey, cfg: PrefilterConfig, matrix: InfluenceMatrix | np.ndarray
) -> np.ndarray:
    """Indices of observations in ``d`` whose situation is at least ``cfg.similarity_threshold`` similar to ``target``.

    Raises EmptyLocalDataset when nothing qualifies.
    """
    values = matrix.values if isinstance(matrix, InfluenceMatrix) else np.asarray(matrix)
    sel = LocalSelector(d, influence_representer(values, d.schema, cfg.strategy), cfg.similarity_threshold)
    rows = sel.select(target)
    if len(rows) == 0:
        raise EmptyLocalDataset(f"no observations within similarity {cfg.similarity_threshold} of {tuple(target)}")
    return rows
