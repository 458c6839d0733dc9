"""Context situation representations and their cosine similarity.

A situation key is a tuple with one entry per context factor: the index of
the observed condition within that factor, or -1 when the factor is unknown.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from os import PathLike
from typing import Sequence

import numpy as np

from .dataset import Dataset, DatasetSchema
from .errors import ValidationError

STRATEGIES = ("aggregation", "concatenation")

SituationKey = tuple


def situation_label(key: SituationKey, schema: DatasetSchema) -> str:
    """Readable canonical form, e.g. ``time=morning|social=?|season=spring``."""
    parts = []
    for f, c in zip(schema.factors, key):
        parts.append(f"{f.name}={f.conditions[c] if c >= 0 else '?'}")
    return "|".join(parts)


def condition_positions(key: SituationKey, schema: DatasetSchema) -> list[int]:
    offsets = schema.factor_offsets
    return [int(offsets[k] + c) for k, c in enumerate(key) if c >= 0]


@dataclass(frozen=True)
class SituationRepresentation:
    situation_key: SituationKey
    vector: np.ndarray
    strategy: str


def represent_many(
    keys: np.ndarray, condition_vectors: np.ndarray, schema: DatasetSchema, strategy: str
) -> np.ndarray:
    """Vectors for a batch of situation keys (rows of ``keys``).

    Aggregation averages the known conditions' vectors; a situation with no
    known factor gets a zero vector. Concatenation lays factor blocks out in
    schema order with zeros for unknown factors.
    """
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown representation strategy {strategy!r}")
    keys = np.asarray(keys, dtype=np.intp).reshape(-1, schema.n_factors)
    W = np.asarray(condition_vectors, dtype=np.float64)
    n_sit, m = keys.shape
    e = W.shape[1]
    offsets = schema.factor_offsets
    if strategy == "aggregation":
        out = np.zeros((n_sit, e))
        count = np.zeros(n_sit)
        for k in range(m):
            known = keys[:, k] >= 0
            out[known] += W[offsets[k] + keys[known, k]]
            count += known
        nz = count > 0
        out[nz] /= count[nz, None]
        return out
    out = np.zeros((n_sit, m * e))
    for k in range(m):
        known = keys[:, k] >= 0
        out[known, k * e:(k + 1) * e] = W[offsets[k] + keys[known, k]]
    return out


def situation_representation(
    key: SituationKey, condition_vectors: np.ndarray, schema: DatasetSchema, strategy: str
) -> SituationRepresentation:
    """Represent one situation from per-condition influence vectors (rows of ``condition_vectors``)."""
    key = tuple(int(c) for c in key)
    if len(key) != schema.n_factors:
        raise ValidationError(f"situation key has {len(key)} entries, schema has {schema.n_factors} factors")
    if strategy == "aggregation" and all(c < 0 for c in key):
        raise ValidationError("cannot aggregate a situation with no known factor")
    vec = represent_many(np.asarray([key]), condition_vectors, schema, strategy)[0]
    return SituationRepresentation(key, vec, strategy)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_to(target: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Cosine of each row of ``rows`` against ``target``; 0 wherever a norm is 0."""
    rows = np.asarray(rows, dtype=np.float64)
    tn = np.linalg.norm(target)
    rn = np.linalg.norm(rows, axis=1)
    out = np.zeros(len(rows))
    if tn == 0:
        return out
    nz = rn > 0
    out[nz] = rows[nz] @ target / (rn[nz] * tn)
    return np.clip(out, -1.0, 1.0)


def situation_similarity(a: SituationRepresentation, b: SituationRepresentation) -> float:
    if a.strategy != b.strategy:
        raise ValidationError(f"cannot compare {a.strategy} with {b.strategy} representations")
    if a.vector.shape != b.vector.shape:
        raise ValidationError(f"dimension mismatch: {a.vector.shape[0]} vs {b.vector.shape[0]}")
    return cosine(a.vector, b.vector)


def enumerate_situations(d: Dataset) -> list[tuple[SituationKey, np.ndarray]]:
    """Distinct situation keys in ``d`` (sorted) with the observations holding each."""
    if len(d) == 0:
        return []
    keys, inverse = np.unique(np.asarray(d.codes), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    return [
        (tuple(int(c) for c in keys[s]), order[bounds[s]:bounds[s + 1]])
        for s in range(len(keys))
    ]


def similarity_matrix(reps: Sequence[SituationRepresentation]) -> np.ndarray:
    V = np.vstack([r.vector for r in reps])
    norms = np.linalg.norm(V, axis=1)
    nz = norms > 0
    U = np.zeros_like(V)
    U[nz] = V[nz] / norms[nz, None]
    return np.clip(U @ U.T, -1.0, 1.0)


def write_similarity_csv(path: str | PathLike, reps: Sequence[SituationRepresentation], schema: DatasetSchema) -> None:
    S = similarity_matrix(reps)
    labels = [situation_label(r.situation_key, schema) for r in reps]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["situation", *labels])
        for label, row in zip(labels, S):
            w.writerow([label, *(f"{v:.6f}" for v in row)])
