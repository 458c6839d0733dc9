"""Synthetic contextual ratings with planted, cluster-dependent context effects.

Ratings follow ``clamp(mean + b_u + b_i + p_u.q_i + effects + noise)`` where
``effects`` sums, over the known factors of the rating's situation, the
planted effect of the present condition on the item's cluster. Rated
(user, item) cells are drawn with Zipf-like user and item popularity.

Effect patterns per (item cluster, factor) block:

- ``typed``: each condition carries a fixed direction (+1 or -1, both present
  in every factor) and each cluster a +1/-1 sensitivity to the factor, so the
  effect is ``influence * sensitivity * direction``.
- ``signs``: independent balanced +-influence signs per block.
- ``grid``: a shuffled, evenly spaced grid from ``-influence`` to ``+influence``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from os import PathLike
from pathlib import Path

import numpy as np

from .dataset import ContextFactorSpec, Dataset, DatasetSchema, write_dataset
from .errors import ValidationError


@dataclass(frozen=True)
class SynthParams:
    users: int = 200
    items: int = 100
    ratings: int = 8000
    factors: int = 3
    conditions_per_factor: int = 3
    influence: float = 1.0
    noise: float = 0.5
    item_clusters: int = 4
    user_clusters: int = 3
    attributes: int = 3
    attribute_noise: float = 0.1
    missing_context: float = 0.0
    mean: float = 3.0
    user_bias_sd: float = 0.3
    item_bias_sd: float = 0.3
    latent_dim: int = 3
    latent_sd: float = 0.3
    integer_ratings: bool = True
    effect_pattern: str = "typed"
    item_skew: float = 1.0
    user_skew: float = 0.5
    seed: int = 0

    def __post_init__(self):
        positive = ("users", "items", "ratings", "factors", "item_clusters", "user_clusters", "latent_dim")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.conditions_per_factor < 2:
            raise ValidationError("conditions_per_factor must be >= 2")
        if self.influence < 0 or self.noise < 0:
            raise ValidationError("influence and noise must be non-negative")
        if self.item_clusters > self.items or self.user_clusters > self.users:
            raise ValidationError("more clusters than entities")
        if not 0 <= self.attribute_noise <= 1 or not 0 <= self.missing_context < 1:
            raise ValidationError("attribute_noise must be in [0, 1], missing_context in [0, 1)")
        if self.item_skew < 0 or self.user_skew < 0:
            raise ValidationError("popularity skews must be non-negative")
        if self.effect_pattern not in ("typed", "signs", "grid"):
            raise ValidationError("effect_pattern must be 'typed', 'signs' or 'grid'")
        if self.attributes < 0:
            raise ValidationError("attributes must be >= 0")

    @classmethod
    def from_dict(cls, d) -> "SynthParams":
        fields = set(cls.__dataclass_fields__)
        unknown = set(d) - fields
        if unknown:
            raise ValidationError(f"unknown generator parameters {sorted(unknown)}")
        return cls(**d)


@dataclass
class SynthResult:
    dataset: Dataset
    effects: np.ndarray  # (item_clusters, n_conditions)
    item_cluster: np.ndarray
    user_cluster: np.ndarray
    params: SynthParams


def _schema(p: SynthParams) -> DatasetSchema:
    factors = tuple(
        ContextFactorSpec(f"f{k}", tuple(f"c{k}_{j}" for j in range(p.conditions_per_factor)))
        for k in range(p.factors)
    )
    return DatasetSchema(
        factors=factors,
        item_attributes=tuple(f"ia{j}" for j in range(p.attributes)),
        user_attributes=tuple(f"ua{j}" for j in range(p.attributes)),
    )


def _attributes(rng, ids, cluster, n_clusters, p: SynthParams, prefix):
    table = {}
    for e, g in zip(ids, cluster):
        row = {}
        for j in range(p.attributes):
            v = g if rng.random() >= p.attribute_noise else rng.integers(n_clusters)
            row[f"{prefix}{j}"] = f"v{v}"
        table[e] = row
    return table


def generate(p: SynthParams) -> SynthResult:
    rng = np.random.default_rng(p.seed)
    schema = _schema(p)
    users = [f"u{j:04d}" for j in range(p.users)]
    items = [f"i{j:04d}" for j in range(p.items)]
    # every cluster gets at least one member
    item_cluster = rng.permutation(np.arange(p.items) % p.item_clusters)
    user_cluster = rng.permutation(np.arange(p.users) % p.user_clusters)

    c = p.conditions_per_factor
    grid = np.linspace(-1.0, 1.0, c) * p.influence
    effects = np.zeros((p.item_clusters, schema.n_conditions))
    offsets = schema.factor_offsets
    types = [rng.permutation(np.r_[np.ones(n), -np.ones(c - n)]) for n in rng.integers(1, c, p.factors)]
    for g in range(p.item_clusters):
        for k in range(p.factors):
            if p.effect_pattern == "typed":
                block = types[k] * rng.choice([-1.0, 1.0]) * p.influence
            elif p.effect_pattern == "grid":
                block = rng.permutation(grid)
            else:
                n_pos = rng.integers(1, c)
                block = rng.permutation(np.r_[np.ones(n_pos), -np.ones(c - n_pos)]) * p.influence
            effects[g, offsets[k]:offsets[k + 1]] = block

    b_u = rng.normal(0, p.user_bias_sd, p.users)
    b_i = rng.normal(0, p.item_bias_sd, p.items)
    P = rng.normal(0, p.latent_sd, (p.users, p.latent_dim))
    Q = rng.normal(0, p.latent_sd, (p.items, p.latent_dim))

    # Zipf-like activity: entity at popularity rank j has weight (j + 1) ** -skew
    item_w = (rng.permutation(p.items) + 1.0) ** -p.item_skew
    user_w = (rng.permutation(p.users) + 1.0) ** -p.user_skew
    cell_w = np.outer(user_w, item_w).ravel()
    total = p.users * p.items
    cells = rng.choice(total, size=p.ratings, replace=p.ratings > total, p=cell_w / cell_w.sum())
    cells.sort()
    u, i = np.divmod(cells, p.items)
    codes = rng.integers(c, size=(p.ratings, p.factors))
    if p.missing_context > 0:
        codes[rng.random(codes.shape) < p.missing_context] = -1

    effect_sum = np.zeros(p.ratings)
    for k in range(p.factors):
        known = codes[:, k] >= 0
        effect_sum[known] += effects[item_cluster[i[known]], offsets[k] + codes[known, k]]
    base = p.mean + b_u[u] + b_i[i] + np.einsum("ij,ij->i", P[u], Q[i])
    r = base + effect_sum + rng.normal(0, p.noise, p.ratings)
    lo, hi = schema.rating_scale
    if p.integer_ratings:
        r = np.rint(r)
    r = np.clip(r, lo, hi)

    d = Dataset(
        schema=schema,
        users=users,
        items=items,
        user_idx=u.astype(np.intp),
        item_idx=i.astype(np.intp),
        ratings=r.astype(np.float64),
        codes=codes.astype(np.intp),
        item_attributes=_attributes(rng, items, item_cluster, p.item_clusters, p, "ia"),
        user_attributes=_attributes(rng, users, user_cluster, p.user_clusters, p, "ua"),
    )
    return SynthResult(d, effects, item_cluster, user_cluster, p)


def write(result: SynthResult, out_dir: str | PathLike) -> dict[str, Path]:
    """Write ratings.csv, schema.json, effects.csv and the true cluster tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = result.dataset
    paths = {
        "ratings": out / "ratings.csv",
        "schema": out / "schema.json",
        "effects": out / "effects.csv",
        "item_clusters": out / "item_clusters.csv",
        "user_clusters": out / "user_clusters.csv",
        "params": out / "params.json",
    }
    write_dataset(paths["ratings"], d)
    with open(paths["schema"], "w") as f:
        json.dump(d.schema.to_dict(), f, indent=2)
        f.write("\n")
    with open(paths["effects"], "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["item_cluster", "condition", "effect"])
        for g, row in enumerate(result.effects):
            for name, e in zip(d.schema.condition_names, row):
                w.writerow([g, name, f"{e:g}"])
    for key, ids, cl in (("item_clusters", d.items, result.item_cluster), ("user_clusters", d.users, result.user_cluster)):
        with open(paths[key], "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([key.split("_")[0], "cluster"])
            w.writerows(zip(ids, cl.tolist()))
    with open(paths["params"], "w") as f:
        json.dump(asdict(result.params), f, indent=2, sort_keys=True)
        f.write("\n")
    return paths
