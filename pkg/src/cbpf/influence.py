"""Per-condition influence vectors: Pearson correlation between ratings and condition bits.

For a condition and a basis entity (an item, a user, or a cluster of
either), the influence is the correlation between the ratings in the
entity's observations and the condition's 0/1 indicator over those same
observations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from os import PathLike

import numpy as np

from .dataset import Dataset
from .errors import ValidationError
from .preprocess import ClusterAssignment

BASES = ("item", "user", "item_cluster", "user_cluster")


@dataclass(frozen=True)
class InfluenceMode:
    basis: str = "item"
    cluster_assignment: ClusterAssignment | None = None
    unknown_as_zero: bool = False

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValidationError(f"unknown influence basis {self.basis!r}")
        clustered = self.basis.endswith("_cluster")
        if clustered != (self.cluster_assignment is not None):
            raise ValidationError("cluster_assignment is required exactly for cluster bases")

    def entity_index(self, d: Dataset) -> tuple[np.ndarray, int]:
        """Basis entity of every observation, and the number of basis entities."""
        if self.basis == "item":
            return np.asarray(d.item_idx), d.n_items
        if self.basis == "user":
            return np.asarray(d.user_idx), d.n_users
        ca = self.cluster_assignment
        if self.basis == "item_cluster":
            per_entity = ca.index_array(d.items)
            return per_entity[d.item_idx], ca.k
        per_entity = ca.index_array(d.users)
        return per_entity[d.user_idx], ca.k


@dataclass(frozen=True)
class ConditionInfluenceVector:
    condition: int
    values: np.ndarray
    support: np.ndarray


def _pcc_by_group(
    r: np.ndarray, c: np.ndarray, group: np.ndarray, n_groups: int
) -> tuple[np.ndarray, np.ndarray]:
    """Two-pass Pearson correlation of ``r`` and ``c`` within each group."""
    count = np.bincount(group, minlength=n_groups).astype(np.float64)
    safe = np.maximum(count, 1.0)
    r_mean = np.bincount(group, weights=r, minlength=n_groups) / safe
    c_mean = np.bincount(group, weights=c, minlength=n_groups) / safe
    dr = r - r_mean[group]
    dc = c - c_mean[group]
    sxy = np.bincount(group, weights=dr * dc, minlength=n_groups)
    sxx = np.bincount(group, weights=dr * dr, minlength=n_groups)
    syy = np.bincount(group, weights=dc * dc, minlength=n_groups)

    # a constant variable can leave rounding residue in sxx/syy; test constancy exactly
    r_const = _constant_within(r, group, n_groups)
    c_const = _constant_within(c, group, n_groups)
    ok = (count >= 2) & ~r_const & ~c_const & (sxx > 0) & (syy > 0)
    values = np.zeros(n_groups)
    values[ok] = sxy[ok] / (np.sqrt(sxx[ok]) * np.sqrt(syy[ok]))
    np.clip(values, -1.0, 1.0, out=values)
    return values, count.astype(np.int64)


def _constant_within(x: np.ndarray, group: np.ndarray, n_groups: int) -> np.ndarray:
    lo = np.full(n_groups, np.inf)
    hi = np.full(n_groups, -np.inf)
    np.minimum.at(lo, group, x)
    np.maximum.at(hi, group, x)
    return lo == hi


def condition_influence_vector(d: Dataset, condition: int, mode: InfluenceMode) -> ConditionInfluenceVector:
    """Influence of one condition on ratings, one correlation per basis entity.

    Observations whose factor for ``condition`` is unknown are left out of
    the correlation unless ``mode.unknown_as_zero`` is set. Entries with
    fewer than two observations, or where ratings or the indicator are
    constant, are 0.
    """
    n = d.schema.n_conditions
    if not 0 <= condition < n:
        raise ValidationError(f"condition index {condition} out of range [0, {n})")
    group, n_groups = mode.entity_index(d)
    if n_groups == 0:
        raise ValidationError("influence basis has no entities")
    r = np.asarray(d.ratings, dtype=np.float64)
    c = np.asarray(d.bits[:, condition], dtype=np.float64)
    if not mode.unknown_as_zero:
        keep = d.known[:, d.schema.condition_factor[condition]]
        r, c, group = r[keep], c[keep], group[keep]
    values, support = _pcc_by_group(r, c, group, n_groups)
    return ConditionInfluenceVector(condition, values, support)


@dataclass(frozen=True)
class InfluenceMatrix:
    """Influence vectors of all conditions stacked row-wise (conditions x basis entities)."""

    values: np.ndarray
    support: np.ndarray
    basis: str

    @property
    def vectors(self) -> list[ConditionInfluenceVector]:
        return [ConditionInfluenceVector(j, self.values[j], self.support[j]) for j in range(len(self.values))]

    def to_csv(self, path: str | PathLike, condition_names=None, entity_names=None) -> None:
        n, e = self.values.shape
        condition_names = condition_names or [str(j) for j in range(n)]
        entity_names = entity_names or [str(j) for j in range(e)]
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["condition", *entity_names])
            for name, row in zip(condition_names, self.values):
                w.writerow([name, *(f"{v:.10g}" for v in row)])


def influence_matrix(d: Dataset, mode: InfluenceMode) -> InfluenceMatrix:
    """Influence vectors for every condition, in schema order."""
    vecs = [condition_influence_vector(d, j, mode) for j in range(d.schema.n_conditions)]
    group, n_groups = mode.entity_index(d)
    if vecs:
        values = np.vstack([v.values for v in vecs])
        support = np.vstack([v.support for v in vecs])
    else:
        values = np.zeros((0, n_groups))
        support = np.zeros((0, n_groups), dtype=np.int64)
    return InfluenceMatrix(values, support, mode.basis)
