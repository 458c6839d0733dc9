"""Comparison systems: context-free MF, exact and binary pre-filtering, and DSPF influence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .context import SituationKey
from .dataset import Dataset, codes_to_bits
from .errors import EmptyLocalDataset, ValidationError
from .influence import ConditionInfluenceVector, InfluenceMatrix
from .recommender import BiasBaseline, MfHyperparams, MfModel, train_mf


@dataclass(frozen=True)
class DspfConfig:
    basis: str = "item"
    beta: float = 5.0
    baseline_damping: float = 0.0

    def __post_init__(self):
        if self.basis not in ("item", "user"):
            raise ValidationError(f"DSPF basis must be item or user, not {self.basis!r}")
        if self.beta < 0:
            raise ValidationError("beta must be non-negative")


def exact_prefilter(d: Dataset, target: SituationKey) -> np.ndarray:
    """Observations whose situation equals ``target`` exactly."""
    target = np.asarray(tuple(target), dtype=np.intp)
    rows = np.flatnonzero((np.asarray(d.codes) == target).all(axis=1))
    if len(rows) == 0:
        raise EmptyLocalDataset(f"no observation in situation {tuple(target.tolist())}")
    return rows


def binary_situation_representation(situation: SituationKey, schema) -> np.ndarray:
    return codes_to_bits(situation, schema).astype(np.float64)


def dspf_influence_matrix(d: Dataset, cfg: DspfConfig, baseline: BiasBaseline | None = None) -> InfluenceMatrix:
    """Damped mean deviation from the bias baseline, for every condition and entity.

    ``w = sum(r - r_hat) / (count + beta)`` over the entity's ratings where the
    condition is present.
    """
    if baseline is None:
        baseline = BiasBaseline.fit(d, damping=cfg.baseline_damping)
    resid = d.ratings - baseline.predict_idx(d.user_idx, d.item_idx)
    group, n_groups = (d.item_idx, d.n_items) if cfg.basis == "item" else (d.user_idx, d.n_users)
    n = d.schema.n_conditions
    values = np.zeros((n, n_groups))
    support = np.zeros((n, n_groups), dtype=np.int64)
    for j in range(n):
        rows = np.flatnonzero(d.bits[:, j])
        total = np.bincount(group[rows], weights=resid[rows], minlength=n_groups)
        count = np.bincount(group[rows], minlength=n_groups)
        denom = count + cfg.beta
        np.divide(total, denom, out=values[j], where=denom > 0)
        support[j] = count
    return InfluenceMatrix(values, support, cfg.basis)


def dspf_condition_influence(d: Dataset, condition: int, cfg: DspfConfig) -> ConditionInfluenceVector:
    if not 0 <= condition < d.schema.n_conditions:
        raise ValidationError(f"condition index {condition} out of range")
    return dspf_influence_matrix(d, cfg).vectors[condition]


def context_free_mf(d: Dataset, hp: MfHyperparams = MfHyperparams(), indices=None) -> MfModel:
    idx = np.arange(len(d)) if indices is None else indices
    return train_mf(d, idx, hp)
