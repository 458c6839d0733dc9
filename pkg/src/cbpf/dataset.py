"""Contextual rating datasets: schema, CSV ingestion, binarization and statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import DatasetError, RowError

UNKNOWN = None


@dataclass(frozen=True)
class ContextFactorSpec:
    name: str
    conditions: tuple[str, ...]

    def __post_init__(self):
        if not self.conditions:
            raise DatasetError(f"factor {self.name!r} declares no conditions")
        if len(set(self.conditions)) != len(self.conditions):
            raise DatasetError(f"factor {self.name!r} has duplicate conditions")


@dataclass(frozen=True)
class DatasetSchema:
    """Column layout of a contextual rating file.

    Each context factor is read from the column of the same name. Attribute
    columns carry item or user content and are folded into per-entity tables.
    """

    user_column: str = "user"
    item_column: str = "item"
    rating_column: str = "rating"
    rating_scale: tuple[int, int] = (1, 5)
    factors: tuple[ContextFactorSpec, ...] = ()
    item_attributes: tuple[str, ...] = ()
    user_attributes: tuple[str, ...] = ()
    missing_token: str = "NA"
    delimiter: str = ","
    # raw discretization rule dicts, parsed by cbpf.preprocess
    discretization: tuple[Mapping, ...] = ()

    def __post_init__(self):
        lo, hi = self.rating_scale
        if not lo < hi:
            raise DatasetError(f"invalid rating scale {self.rating_scale}")
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise DatasetError("factor names must be unique")
        cols = [self.user_column, self.item_column, self.rating_column, *names,
                *self.item_attributes, *self.user_attributes]
        if len(set(cols)) != len(cols):
            raise DatasetError("column names must be unique across roles")

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetSchema":
        factors = tuple(
            ContextFactorSpec(f["name"], tuple(str(c) for c in f["conditions"]))
            for f in d.get("factors", [])
        )
        return cls(
            user_column=d.get("user_column", "user"),
            item_column=d.get("item_column", "item"),
            rating_column=d.get("rating_column", "rating"),
            rating_scale=tuple(d.get("rating_scale", (1, 5))),
            factors=factors,
            item_attributes=tuple(d.get("item_attributes", ())),
            user_attributes=tuple(d.get("user_attributes", ())),
            missing_token=d.get("missing_token", "NA"),
            delimiter=d.get("delimiter", ","),
            discretization=tuple(d.get("discretization", ())),
        )

    @classmethod
    def load(cls, path: str | PathLike) -> "DatasetSchema":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {
            "user_column": self.user_column,
            "item_column": self.item_column,
            "rating_column": self.rating_column,
            "rating_scale": list(self.rating_scale),
            "factors": [{"name": f.name, "conditions": list(f.conditions)} for f in self.factors],
            "item_attributes": list(self.item_attributes),
            "user_attributes": list(self.user_attributes),
            "missing_token": self.missing_token,
            "delimiter": self.delimiter,
            "discretization": [dict(r) for r in self.discretization],
        }

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def n_conditions(self) -> int:
        return sum(len(f.conditions) for f in self.factors)

    @property
    def factor_offsets(self) -> np.ndarray:
        """Start position of each factor's block in the condition vector (plus the total)."""
        sizes = [len(f.conditions) for f in self.factors]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)

    @property
    def condition_factor(self) -> np.ndarray:
        """Factor index owning each condition position."""
        return np.repeat(np.arange(self.n_factors), [len(f.conditions) for f in self.factors])

    @property
    def condition_names(self) -> list[str]:
        return [f"{f.name}={c}" for f in self.factors for c in f.conditions]

    def factor_index(self, name: str) -> int:
        for k, f in enumerate(self.factors):
            if f.name == name:
                return k
        raise DatasetError(f"unknown context factor {name!r}")


@dataclass(frozen=True)
class ContextualObservation:
    user: Hashable
    item: Hashable
    rating: float
    conditions: np.ndarray
    known_factors: frozenset[int]


def situation_codes(factor_values: Mapping[str, str | None], schema: DatasetSchema) -> tuple[int, ...]:
    """Per-factor condition index (-1 when unknown) for a factor-name mapping."""
    codes = [-1] * schema.n_factors
    for name, value in factor_values.items():
        k = schema.factor_index(name)
        if value is UNKNOWN or value == schema.missing_token or value == "":
            continue
        conds = schema.factors[k].conditions
        if value not in conds:
            raise DatasetError(f"unknown condition {value!r} for factor {name!r}")
        codes[k] = conds.index(value)
    return tuple(codes)


def codes_to_bits(codes: Sequence[int], schema: DatasetSchema) -> np.ndarray:
    offsets = schema.factor_offsets
    bits = np.zeros(schema.n_conditions, dtype=np.uint8)
    for k, c in enumerate(codes):
        if c >= 0:
            bits[offsets[k] + c] = 1
    return bits


def binarize_situation(
    factor_values: Mapping[str, str | None], schema: DatasetSchema
) -> tuple[np.ndarray, frozenset[int]]:
    """One-hot encode a context situation.

    Factors missing from ``factor_values`` (or mapped to ``None`` or the
    schema's missing token) are unknown and contribute an all-zero block.
    """
    codes = situation_codes(factor_values, schema)
    known = frozenset(k for k, c in enumerate(codes) if c >= 0)
    return codes_to_bits(codes, schema), known


def decode_situation(bits: np.ndarray, schema: DatasetSchema) -> dict[str, str | None]:
    offsets = schema.factor_offsets
    out: dict[str, str | None] = {}
    for k, f in enumerate(schema.factors):
        block = np.asarray(bits[offsets[k]:offsets[k + 1]])
        out[f.name] = f.conditions[int(block.argmax())] if block.any() else UNKNOWN
    return out


@dataclass(eq=False)
class Dataset:
    """An immutable table of contextual ratings.

    Observations are stored column-wise: ``user_idx``/``item_idx`` index into
    ``users``/``items``, ``codes`` holds the per-factor condition index (-1 for
    unknown), and ``bits`` is the binarized condition matrix.
    """

    schema: DatasetSchema
    users: list
    items: list
    user_idx: np.ndarray
    item_idx: np.ndarray
    ratings: np.ndarray
    codes: np.ndarray
    item_attributes: dict = field(default_factory=dict)
    user_attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.intp).reshape(len(self.ratings), self.schema.n_factors)
        self.bits = np.zeros((len(self.ratings), self.schema.n_conditions), dtype=np.uint8)
        offsets = self.schema.factor_offsets
        for k in range(self.schema.n_factors):
            rows = np.flatnonzero(self.codes[:, k] >= 0)
            self.bits[rows, offsets[k] + self.codes[rows, k]] = 1
        self.known = self.codes >= 0
        self.user_pos = {u: j for j, u in enumerate(self.users)}
        self.item_pos = {i: j for j, i in enumerate(self.items)}
        for arr in (self.user_idx, self.item_idx, self.ratings, self.codes, self.bits, self.known):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def observation(self, t: int) -> ContextualObservation:
        return ContextualObservation(
            user=self.users[self.user_idx[t]],
            item=self.items[self.item_idx[t]],
            rating=float(self.ratings[t]),
            conditions=self.bits[t].copy(),
            known_factors=frozenset(np.flatnonzero(self.known[t]).tolist()),
        )

    @property
    def observations(self) -> list[ContextualObservation]:
        return [self.observation(t) for t in range(len(self))]

    def subset(self, indices) -> "Dataset":
        """Observations at ``indices``; user and item indexing is shared with ``self``."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            schema=self.schema,
            users=self.users,
            items=self.items,
            user_idx=self.user_idx[idx],
            item_idx=self.item_idx[idx],
            ratings=self.ratings[idx],
            codes=self.codes[idx],
            item_attributes=self.item_attributes,
            user_attributes=self.user_attributes,
        )

    def known_condition_mask(self) -> np.ndarray:
        """(N, n) mask: True where the owning factor of a condition was observed."""
        return self.known[:, self.schema.condition_factor]

    @classmethod
    def from_records(
        cls,
        schema: DatasetSchema,
        records: Sequence[tuple],
        item_attributes: Mapping | None = None,
        user_attributes: Mapping | None = None,
    ) -> "Dataset":
        """Build from ``(user, item, rating, {factor: condition})`` tuples."""
        users: dict = {}
        items: dict = {}
        uidx, iidx, ratings, codes = [], [], [], []
        lo, hi = schema.rating_scale
        for user, item, rating, situation in records:
            rating = float(rating)
            if not lo <= rating <= hi:
                raise DatasetError(f"rating {rating} outside scale {schema.rating_scale}")
            uidx.append(users.setdefault(user, len(users)))
            iidx.append(items.setdefault(item, len(items)))
            ratings.append(rating)
            codes.append(situation_codes(situation, schema))
        return cls(
            schema=schema,
            users=list(users),
            items=list(items),
            user_idx=np.asarray(uidx, dtype=np.intp),
            item_idx=np.asarray(iidx, dtype=np.intp),
            ratings=np.asarray(ratings, dtype=np.float64),
            codes=np.asarray(codes, dtype=np.intp).reshape(len(ratings), schema.n_factors),
            item_attributes=dict(item_attributes or {}),
            user_attributes=dict(user_attributes or {}),
        )


def _cell(value: str, missing: str):
    value = value.strip()
    return None if value == "" or value == missing else value


def load_dataset(path: str | PathLike, schema: DatasetSchema) -> Dataset:
    """Read a delimited rating file with one header row.

    Unknown factor values (empty or the missing token) leave the factor's
    block at zero. Attribute columns are collected per entity; the first
    non-missing value seen for an entity wins.
    """
    path = Path(path)
    with open(path, newline="") as f:
        return _parse(f, schema, str(path))


def loads_dataset(text: str, schema: DatasetSchema) -> Dataset:
    return _parse(io.StringIO(text), schema, "<string>")


def _parse(stream, schema: DatasetSchema, source: str) -> Dataset:
    reader = csv.reader(stream, delimiter=schema.delimiter, skipinitialspace=True)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DatasetError(f"{source}: missing header row")
    required = [schema.user_column, schema.item_column, schema.rating_column,
                *(f.name for f in schema.factors), *schema.item_attributes, *schema.user_attributes]
    absent = [c for c in required if c not in header]
    if absent:
        raise DatasetError(f"{source}: header lacks columns {absent}")
    pos = {h: j for j, h in enumerate(header)}
    lo, hi = schema.rating_scale
    miss = schema.missing_token

    users: dict = {}
    items: dict = {}
    uidx, iidx, ratings, codes = [], [], [], []
    item_attrs: dict = {}
    user_attrs: dict = {}
    factor_cols = [(pos[f.name], {c: j for j, c in enumerate(f.conditions)}, f.name) for f in schema.factors]

    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise RowError(source, line, f"expected {len(header)} fields, got {len(row)}")
        user = row[pos[schema.user_column]].strip()
        item = row[pos[schema.item_column]].strip()
        try:
            rating = float(row[pos[schema.rating_column]])
        except ValueError:
            raise RowError(source, line, f"unparseable rating {row[pos[schema.rating_column]]!r}")
        if not math.isfinite(rating) or not lo <= rating <= hi:
            raise RowError(source, line, f"rating {rating:g} outside scale {lo}-{hi}")
        code = []
        for col, lookup, name in factor_cols:
            value = _cell(row[col], miss)
            if value is None:
                code.append(-1)
            elif value in lookup:
                code.append(lookup[value])
            else:
                raise RowError(source, line, f"unknown condition {value!r} for factor {name!r}")
        uidx.append(users.setdefault(user, len(users)))
        iidx.append(items.setdefault(item, len(items)))
        ratings.append(rating)
        codes.append(code)
        _collect(item_attrs, item, row, pos, schema.item_attributes, miss)
        _collect(user_attrs, user, row, pos, schema.user_attributes, miss)

    return Dataset(
        schema=schema,
        users=list(users),
        items=list(items),
        user_idx=np.asarray(uidx, dtype=np.intp),
        item_idx=np.asarray(iidx, dtype=np.intp),
        ratings=np.asarray(ratings, dtype=np.float64),
        codes=np.asarray(codes, dtype=np.intp).reshape(len(ratings), schema.n_factors),
        item_attributes=item_attrs,
        user_attributes=user_attrs,
    )


def _collect(table: dict, key, row, pos, columns, miss):
    if not columns:
        return
    entry = table.setdefault(key, {c: None for c in columns})
    for c in columns:
        if entry[c] is None:
            entry[c] = _cell(row[pos[c]], miss)


def write_dataset(path: str | PathLike, d: Dataset) -> None:
    """Write ``d`` in the delimited format :func:`load_dataset` reads."""
    s = d.schema
    header = [s.user_column, s.item_column, s.rating_column, *(f.name for f in s.factors),
              *s.item_attributes, *s.user_attributes]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter=s.delimiter, lineterminator="\n")
        w.writerow(header)
        for t in range(len(d)):
            user = d.users[d.user_idx[t]]
            item = d.items[d.item_idx[t]]
            ctx = [fs.conditions[c] if c >= 0 else s.missing_token for fs, c in zip(s.factors, d.codes[t])]
            ia = d.item_attributes.get(item, {})
            ua = d.user_attributes.get(user, {})
            attrs = [_fmt_attr(ia.get(a), s.missing_token) for a in s.item_attributes]
            attrs += [_fmt_attr(ua.get(a), s.missing_token) for a in s.user_attributes]
            w.writerow([user, item, f"{d.ratings[t]:g}", *ctx, *attrs])


def _fmt_attr(v, miss):
    return miss if v is None else v


@dataclass
class StatsReport:
    n_ratings: int
    n_users: int
    n_items: int
    rating_scale: tuple[int, int]
    mean: float | None
    median: float | None
    std: float | None
    sparsity: float | None
    n_factors: int
    n_conditions: int
    n_item_attributes: int
    n_user_attributes: int

    def rows(self) -> list[tuple[str, str]]:
        def num(v, spec):
            return "n/a" if v is None else format(v, spec)

        return [
            ("#ratings", str(self.n_ratings)),
            ("#users", str(self.n_users)),
            ("#items", str(self.n_items)),
            ("rating scale", f"{self.rating_scale[0]}-{self.rating_scale[1]}"),
            ("rating's mean", num(self.mean, ".2f")),
            ("rating's median", num(self.median, "g")),
            ("rating's standard deviation", num(self.std, ".2f")),
            ("sparsity", "n/a" if self.sparsity is None else f"{100 * self.sparsity:.2f}%"),
            ("#context factors", str(self.n_factors)),
            ("#context conditions", str(self.n_conditions)),
            ("#items characteristics", str(self.n_item_attributes)),
            ("#users characteristics", str(self.n_user_attributes)),
        ]

    def to_text(self) -> str:
        rows = self.rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["statistic", "value"])
        w.writerows(self.rows())
        return buf.getvalue()


def sparsity(n_ratings: int, n_users: int, n_items: int) -> float:
    return 1.0 - n_ratings / (n_users * n_items)


def dataset_stats(d: Dataset) -> StatsReport:
    s = d.schema
    n = len(d)
    if n:
        mean = float(d.ratings.mean())
        median = float(np.median(d.ratings))
        std = float(d.ratings.std(ddof=1)) if n > 1 else 0.0
        # duplicate (user, item) rows count once in the matrix
        pairs = len(set(zip(d.user_idx.tolist(), d.item_idx.tolist())))
        sp = 1.0 - pairs / (d.n_users * d.n_items)
    else:
        mean = median = std = sp = None
    return StatsReport(
        n_ratings=n,
        n_users=d.n_users,
        n_items=d.n_items,
        rating_scale=tuple(s.rating_scale),
        mean=mean,
        median=median,
        std=std,
        sparsity=sp,
        n_factors=s.n_factors,
        n_conditions=s.n_conditions,
        n_item_attributes=len(s.item_attributes),
        n_user_attributes=len(s.user_attributes),
    )
