"""Attribute discretization and item/user clustering.

Attribute tables map an entity id to a ``{attribute: value}`` dict where a
value of ``None`` means missing.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from os import PathLike
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

_log = logging.getLogger(__name__)

KINDS = ("threshold_bins", "interval_bins", "frequency_group", "passthrough", "drop")
OTHER = "other"


@dataclass(frozen=True)
class DiscretizationRule:
    attribute: str
    kind: str
    edges: tuple[float, ...] = ()
    labels: tuple[str, ...] = ()
    width: float | None = None
    min_fraction: float | None = None
    keep: tuple[str, ...] = ()
    entity: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown discretization kind {self.kind!r}")
        if self.kind == "threshold_bins":
            if not self.edges or any(b <= a for a, b in zip(self.edges, self.edges[1:])):
                raise ValidationError(f"{self.attribute}: bin edges must be strictly increasing")
            if self.labels and len(self.labels) != len(self.edges) + 1:
                raise ValidationError(f"{self.attribute}: need {len(self.edges) + 1} labels")
        elif self.kind == "interval_bins":
            if self.width is None or not self.width > 0:
                raise ValidationError(f"{self.attribute}: interval width must be > 0")
        elif self.kind == "frequency_group":
            if not self.keep and (self.min_fraction is None or not 0 < self.min_fraction < 1):
                raise ValidationError(f"{self.attribute}: min_fraction must be in (0, 1)")

    @classmethod
    def from_dict(cls, d: Mapping) -> "DiscretizationRule":
        return cls(
            attribute=d["attribute"],
            kind=d["kind"],
            edges=tuple(float(e) for e in d.get("edges", ())),
            labels=tuple(d.get("labels", ())),
            width=d.get("width"),
            min_fraction=d.get("min_fraction"),
            keep=tuple(str(k) for k in d.get("keep", ())),
            entity=d.get("entity"),
        )


def _num_label(x: float) -> str:
    return f"{x:g}"


def _threshold_label(rule: DiscretizationRule, x: float) -> str:
    j = bisect.bisect_right(rule.edges, x)
    if rule.labels:
        return rule.labels[j]
    if j == 0:
        return f"<{_num_label(rule.edges[0])}"
    if j == len(rule.edges):
        return f">={_num_label(rule.edges[-1])}"
    return f"[{_num_label(rule.edges[j - 1])},{_num_label(rule.edges[j])})"


def _interval_label(width: float, x: float) -> str:
    lo = math.floor(x / width) * width
    return f"[{_num_label(lo)},{_num_label(lo + width)})"


def apply_discretization(
    table: Mapping[Hashable, Mapping[str, object]],
    rules: Sequence[DiscretizationRule],
    errors: list | None = None,
) -> dict[Hashable, dict[str, object]]:
    """Return a new table with every rule applied.

    Values that cannot be parsed as numbers under a numeric rule become
    missing; each such case is appended to ``errors`` as
    ``(entity, attribute, value)`` when a list is given.
    """
    out = {e: dict(row) for e, row in table.items()}
    attrs = set()
    for row in out.values():
        attrs.update(row)
    for rule in rules:
        if out and rule.attribute not in attrs:
            raise ValidationError(f"attribute {rule.attribute!r} not in table")
        if rule.kind == "drop":
            for row in out.values():
                row.pop(rule.attribute, None)
        elif rule.kind == "passthrough":
            for row in out.values():
                if row.get(rule.attribute) is not None:
                    row[rule.attribute] = str(row[rule.attribute])
        elif rule.kind in ("threshold_bins", "interval_bins"):
            for e, row in out.items():
                v = row.get(rule.attribute)
                if v is None:
                    continue
                try:
                    x = float(v)
                    if not math.isfinite(x):
                        raise ValueError(v)
                except (TypeError, ValueError):
                    _log.warning("entity %s: non-numeric %s value %r", e, rule.attribute, v)
                    if errors is not None:
                        errors.append((e, rule.attribute, v))
                    row[rule.attribute] = None
                    continue
                if rule.kind == "threshold_bins":
                    row[rule.attribute] = _threshold_label(rule, x)
                else:
                    row[rule.attribute] = _interval_label(rule.width, x)
        else:
            values = [str(row[rule.attribute]) for row in out.values() if row.get(rule.attribute) is not None]
            if rule.keep:
                kept = set(rule.keep)
            else:
                counts = Counter(values)
                kept = {v for v, c in counts.items() if c / len(values) >= rule.min_fraction}
            for row in out.values():
                v = row.get(rule.attribute)
                if v is not None:
                    row[rule.attribute] = str(v) if str(v) in kept else OTHER
    return out


def gower_distance(a: Mapping[str, object], b: Mapping[str, object]) -> float:
    """Mean categorical mismatch over attributes present in both rows (1 if none are)."""
    shared = [k for k in a if k in b and a[k] is not None and b[k] is not None]
    if not shared:
        return 1.0
    return sum(a[k] != b[k] for k in shared) / len(shared)


def _encode(rows: Sequence[Mapping[str, object]], attributes: Sequence[str]) -> np.ndarray:
    codes = np.full((len(rows), len(attributes)), -1, dtype=np.int64)
    for j, a in enumerate(attributes):
        lookup: dict = {}
        for r, row in enumerate(rows):
            v = row.get(a)
            if v is not None:
                codes[r, j] = lookup.setdefault(v, len(lookup))
    return codes


def gower_matrix(rows: Sequence[Mapping[str, object]], attributes: Sequence[str] | None = None) -> np.ndarray:
    """Pairwise :func:`gower_distance` for a list of rows."""
    if attributes is None:
        attributes = sorted({k for row in rows for k in row})
    codes = _encode(rows, attributes)
    n = len(rows)
    mismatch = np.zeros((n, n))
    comparable = np.zeros((n, n))
    for j in range(codes.shape[1]):
        c = codes[:, j]
        present = c >= 0
        both = present[:, None] & present[None, :]
        comparable += both
        mismatch += both & (c[:, None] != c[None, :])
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.where(comparable > 0, mismatch / np.maximum(comparable, 1), 1.0)
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass
class ClusterAssignment:
    entity_kind: str
    clusters: dict
    k: int
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("cluster count must be >= 1")
        if any(not 0 <= c < self.k for c in self.clusters.values()):
            raise ValidationError("cluster index out of range")

    def index_array(self, ids: Sequence[Hashable]) -> np.ndarray:
        """Cluster index for each id, in order; unseen ids raise KeyError."""
        return np.asarray([self.clusters[e] for e in ids], dtype=np.intp)

    def sizes(self) -> np.ndarray:
        return np.bincount(list(self.clusters.values()), minlength=self.k)

    def to_csv(self, path: str | PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([self.entity_kind, "cluster"])
            for e, c in self.clusters.items():
                w.writerow([e, c])


class Dendrogram:
    """Average-linkage agglomerative merge history over a distance matrix.

    Ties between equally close cluster pairs go to the lexicographically
    lowest (slot, slot) pair; the merged cluster keeps the lower slot.
    """

    def __init__(self, dist: np.ndarray):
        dist = np.array(dist, dtype=np.float64)
        n = len(dist)
        self.n = n
        self.merges: list[tuple[int, int, float]] = []
        D = dist.copy()
        np.fill_diagonal(D, np.inf)
        size = np.ones(n)
        active = np.ones(n, dtype=bool)
        for _ in range(n - 1):
            flat = int(np.argmin(D))
            i, j = divmod(flat, n)
            if i > j:
                i, j = j, i
            h = float(D[i, j])
            self.merges.append((i, j, h))
            merged = (size[i] * D[i] + size[j] * D[j]) / (size[i] + size[j])
            size[i] += size[j]
            active[j] = False
            merged[~active] = np.inf
            merged[i] = np.inf
            D[i, :] = merged
            D[:, i] = merged
            D[j, :] = np.inf
            D[:, j] = np.inf

    def cut(self, k: int) -> np.ndarray:
        """Flat labels for ``k`` clusters, numbered by first appearance."""
        if not 1 <= k <= self.n:
            raise ValidationError(f"cannot cut {self.n} entities into {k} clusters")
        parent = list(range(self.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j, _ in self.merges[: self.n - k]:
            parent[find(j)] = find(i)
        roots = [find(x) for x in range(self.n)]
        number: dict[int, int] = {}
        return np.asarray([number.setdefault(r, len(number)) for r in roots], dtype=np.intp)


def _silhouette(dist: np.ndarray, labels: np.ndarray) -> float:
    from sklearn.metrics import silhouette_score

    return float(silhouette_score(dist, labels, metric="precomputed"))


def hierarchical_cluster(
    table: Mapping[Hashable, Mapping[str, object]],
    k: int | None = None,
    entity_kind: str = "item",
    k_range: tuple[int, int] = (2, 10),
) -> ClusterAssignment:
    """Cluster entities by their categorical attributes.

    Uses average linkage over Gower distances. With ``k`` unset, the cut in
    ``k_range`` with the best mean silhouette is chosen. Entities whose
    attributes are all missing share one extra fallback cluster.
    """
    if not table:
        raise ValidationError("cannot cluster an empty table")
    ids = list(table)
    attrs = sorted({a for row in table.values() for a in row})
    described = [e for e in ids if any(table[e].get(a) is not None for a in attrs)]
    described_set = set(described)
    bare = [e for e in ids if e not in described_set]
    if k is not None and k > len(ids):
        raise ValidationError(f"k={k} exceeds entity count {len(ids)}")

    clusters: dict = {}
    n_main = 0
    if described:
        dist = gower_matrix([table[e] for e in described], attrs)
        tree = Dendrogram(dist)
        if k is not None:
            k_main = min(k, len(described))
        else:
            lo, hi = k_range
            hi = min(hi, len(described) - 1)
            if hi < lo:
                k_main = 1 if len(described) < 2 else min(lo, len(described))
            else:
                scores = {}
                for kk in range(lo, hi + 1):
                    labels = tree.cut(kk)
                    if len(set(labels.tolist())) < 2:
                        continue
                    scores[kk] = _silhouette(dist, labels)
                k_main = max(scores, key=lambda kk: (scores[kk], -kk)) if scores else lo
                _log.info("silhouette by k: %s -> k=%d", {kk: round(s, 4) for kk, s in scores.items()}, k_main)
        labels = tree.cut(k_main)
        clusters = dict(zip(described, labels.tolist()))
        n_main = k_main
    for e in bare:
        clusters[e] = n_main
    return ClusterAssignment(entity_kind, clusters, n_main + (1 if bare else 0))


def single_attribute_clusters(
    table: Mapping[Hashable, Mapping[str, object]], attribute: str, entity_kind: str = "item"
) -> ClusterAssignment:
    """One cluster per distinct value of ``attribute``; missing values share a fallback cluster."""
    values = sorted({str(row[attribute]) for row in table.values() if row.get(attribute) is not None})
    if table and not any(attribute in row for row in table.values()):
        raise ValidationError(f"attribute {attribute!r} not in table")
    index = {v: j for j, v in enumerate(values)}
    clusters = {}
    fallback = False
    for e, row in table.items():
        v = row.get(attribute)
        if v is None:
            clusters[e] = len(values)
            fallback = True
        else:
            clusters[e] = index[str(v)]
    labels = values + (["<missing>"] if fallback else [])
    return ClusterAssignment(entity_kind, clusters, max(1, len(labels)), labels)


def cluster_entities(dataset, entity_kind: str, method: Mapping) -> ClusterAssignment:
    """Cluster the items or users of ``dataset`` as described by ``method``.

    ``method`` is a config mapping: ``{"method": "hierarchical", "k": 4}``,
    ``{"method": "attribute", "attribute": "category"}`` or
    ``{"method": "column", "path": ...}`` (precomputed CSV of id, cluster).
    Every rated entity receives a cluster; ones absent from the attribute
    table land in the fallback cluster.
    """
    if entity_kind == "item":
        ids, raw = dataset.items, dataset.item_attributes
    elif entity_kind == "user":
        ids, raw = dataset.users, dataset.user_attributes
    else:
        raise ValidationError(f"entity kind must be item or user, not {entity_kind!r}")
    rules = [
        DiscretizationRule.from_dict(r)
        for r in dataset.schema.discretization
        if r.get("entity", entity_kind) == entity_kind
    ]
    table = {e: dict(raw.get(e, {})) for e in ids}
    attrs = {a for row in table.values() for a in row}
    rules = [r for r in rules if r.attribute in attrs]
    table = apply_discretization(table, rules)

    kind = method.get("method", "hierarchical")
    if kind == "hierarchical":
        return hierarchical_cluster(table, method.get("k"), entity_kind=entity_kind)
    if kind == "attribute":
        return single_attribute_clusters(table, method["attribute"], entity_kind=entity_kind)
    if kind == "column":
        return read_assignment(method["path"], ids, entity_kind)
    raise ValidationError(f"unknown clustering method {kind!r}")


def read_assignment(path: str | PathLike, ids: Sequence[Hashable], entity_kind: str) -> ClusterAssignment:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    given = {r[0]: int(r[1]) for r in rows if r}
    k = max(given.values(), default=-1) + 1
    clusters = {}
    for e in ids:
        if e in given:
            clusters[e] = given[e]
        else:
            clusters[e] = k
    missing = any(e not in given for e in ids)
    return ClusterAssignment(entity_kind, clusters, k + (1 if missing else 0))
