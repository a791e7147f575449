"""Tabular ingestion: schema inference, one-hot/date/min-max encoding, splits.

Every feature the plan emits lies in [-1, 1] so the tanh decoder can
reproduce it. Categorical values unseen at fit time encode as all zeros.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MISSING = frozenset({"", "NA", "?"})
DATE_FORMATS = ("%Y-%m-%d", "%Y-%m-%d %H:%M:%S")
KINDS = ("numeric", "categorical", "date", "target")
POLICIES = ("drop_row", "impute")
PLAN_FORMAT_VERSION = 1


class SchemaError(ValueError):
    pass


def is_missing(value: str) -> bool:
    return value.strip() in MISSING


def parse_number(value: str) -> float | None:
    try:
        x = float(value)
    except ValueError:
        return None
    return x if math.isfinite(x) else None


def parse_date(value: str) -> date | None:
    value = value.strip()
    for fmt in DATE_FORMATS:
        try:
            return datetime.strptime(value, fmt).date()
        except ValueError:
            pass
    return None


def date_parts(d: date) -> tuple[int, int, int, int]:
    """(year, month, day, weekday) with Monday = 0."""
    return d.year, d.month, d.day, d.weekday()


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if not header:
        raise SchemaError(f"{path}: missing header row")
    dupes = sorted(name for name, c in Counter(header).items() if c > 1)
    if dupes:
        raise SchemaError(f"{path}: duplicate column names {dupes}")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
    return header, rows


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    missing_policy: str = "impute"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.missing_policy not in POLICIES:
            raise SchemaError(f"column {self.name!r}: unknown missing policy {self.missing_policy!r}")


def _infer_kind(values: Sequence[str]) -> str:
    present = [v for v in values if not is_missing(v)]
    if not present:
        return "categorical"
    if all(parse_number(v) is not None for v in present):
        return "numeric"
    if all(parse_date(v) is not None for v in present):
        return "date"
    return "categorical"


def infer_schema(header: Sequence[str], sample_rows: Sequence[Sequence[str]],
                 overrides: dict | None = None, target: str | None = None) -> list[ColumnSchema]:
    """Guess a kind per column from ``sample_rows``; ``overrides`` win.

    An override is either a kind string or a dict with ``kind`` and/or
    ``missing_policy``. The ``target`` column always gets kind ``target`` and
    drops rows where it is missing.
    """
    if not header:
        raise SchemaError("empty header")
    if not sample_rows:
        raise SchemaError("need at least one data row to infer a schema")
    dupes = sorted(n for n, c in Counter(header).items() if c > 1)
    if dupes:
        raise SchemaError(f"duplicate column names {dupes}")
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(header)
    if unknown:
        raise SchemaError(f"overrides name unknown columns {sorted(unknown)}")
    if target is not None and target not in header:
        raise SchemaError(f"target column {target!r} not in header")
    schema = []
    for j, name in enumerate(header):
        kind, policy = _infer_kind([r[j] for r in sample_rows]), "impute"
        ov = overrides.get(name)
        if isinstance(ov, str):
            kind = ov
        elif isinstance(ov, dict):
            kind = ov.get("kind", kind)
            policy = ov.get("missing_policy", policy)
        if name == target:
            kind, policy = "target", "drop_row"
        elif kind == "target":
            raise SchemaError(f"column {name!r} marked as target but target is {target!r}")
        schema.append(ColumnSchema(name, kind, policy))
    return schema


def _minmax(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return 0.0, 0.0
    return float(values.min()), float(values.max())


def _scale(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros_like(values)
    return np.clip(2.0 * (values - lo) / (hi - lo) - 1.0, -1.0, 1.0)


@dataclass
class PreprocessPlan:
    """Fitted per-column state; treat as immutable once :meth:`fit` returns."""

    columns: list[str]
    schema: list[ColumnSchema]
    state: dict[str, dict] = field(default_factory=dict)

    @property
    def feature_names(self) -> list[str]:
        names = []
        for col in self.schema:
            st = self.state.get(col.name)
            if col.kind == "numeric":
                names.append(col.name)
            elif col.kind == "date":
                names += [f"{col.name}_{p}" for p in ("year", "month", "day", "weekday")]
            elif col.kind == "categorical":
                names += [f"{col.name}={v}" for v in st["vocabulary"]]
        return names

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def target(self) -> str | None:
        for col in self.schema:
            if col.kind == "target":
                return col.name
        return None

    def _index(self, name: str) -> int:
        return self.columns.index(name)

    def filter_rows(self, rows: Sequence[Sequence[str]]) -> list[Sequence[str]]:
        """Drop rows that are missing a value in any ``drop_row`` column."""
        idx = [self._index(c.name) for c in self.schema if c.missing_policy == "drop_row"]
        return [r for r in rows if not any(is_missing(r[j]) for j in idx)]

    @classmethod
    def fit(cls, columns: Sequence[str], schema: Sequence[ColumnSchema],
            rows: Sequence[Sequence[str]]) -> "PreprocessPlan":
        columns = list(columns)
        if [c.name for c in schema] != columns:
            raise SchemaError("schema does not match the column list")
        plan = cls(columns, list(schema))
        rows = plan.filter_rows(rows)
        for j, col in enumerate(schema):
            raw = [r[j] for r in rows if not is_missing(r[j])]
            if col.kind == "numeric":
                vals = np.array([parse_number(v) for v in raw], dtype=object)
                if any(v is None for v in vals):
                    raise SchemaError(f"column {col.name!r} holds non-numeric values")
                vals = vals.astype(np.float64)
                lo, hi = _minmax(vals)
                plan.state[col.name] = {"min": lo, "max": hi,
                                        "impute": float(np.median(vals)) if vals.size else 0.0}
            elif col.kind == "date":
                dates = [parse_date(v) for v in raw]
                if any(d is None for d in dates):
                    raise SchemaError(f"column {col.name!r} holds unparseable dates")
                parts = np.array([date_parts(d) for d in dates], dtype=np.float64).reshape(-1, 4)
                ords = sorted(d.toordinal() for d in dates)
                imp = date.fromordinal(ords[(len(ords) - 1) // 2]).isoformat() if ords else "1970-01-01"
                bounds = [_minmax(parts[:, i]) for i in range(4)]
                plan.state[col.name] = {"min": [b[0] for b in bounds], "max": [b[1] for b in bounds],
                                        "impute": imp}
            elif col.kind == "categorical":
                counts = Counter(v.strip() for v in raw)
                mode = min(counts, key=lambda v: (-counts[v], v)) if counts else ""
                plan.state[col.name] = {"vocabulary": sorted(counts), "impute": mode}
            else:
                plan.state[col.name] = {}
        return plan

    def transform(self, rows: Sequence[Sequence[str]]) -> tuple[np.ndarray, list[str]]:
        """Encode ``rows`` into an (n, n_features) matrix in [-1, 1]."""
        if not self.state:
            raise SchemaError("transform called before fit")
        blocks = []
        n = len(rows)
        for r in rows:
            if len(r) != len(self.columns):
                raise SchemaError(f"row has {len(r)} fields, plan expects {len(self.columns)}")
        for j, col in enumerate(self.schema):
            st = self.state[col.name]
            raw = [r[j].strip() for r in rows]
            missing = [is_missing(v) for v in raw]
            if col.missing_policy == "drop_row" and any(missing) and col.kind != "target":
                raise SchemaError(f"column {col.name!r} has missing values; call filter_rows first")
            if col.kind == "numeric":
                vals = []
                for v, miss in zip(raw, missing):
                    x = st["impute"] if miss else parse_number(v)
                    if x is None:
                        raise SchemaError(f"column {col.name!r}: cannot parse {v!r} as a number")
                    vals.append(x)
                blocks.append(_scale(np.array(vals, dtype=np.float64), st["min"], st["max"]).reshape(n, 1))
            elif col.kind == "date":
                parts = []
                for v, miss in zip(raw, missing):
                    d = parse_date(st["impute"] if miss else v)
                    if d is None:
                        raise SchemaError(f"column {col.name!r}: cannot parse {v!r} as a date")
                    parts.append(date_parts(d))
                parts = np.array(parts, dtype=np.float64).reshape(n, 4)
                blocks.append(np.column_stack([_scale(parts[:, i], st["min"][i], st["max"][i])
                                               for i in range(4)]))
            elif col.kind == "categorical":
                vocab = {v: i for i, v in enumerate(st["vocabulary"])}
                onehot = np.zeros((n, len(vocab)))
                for i, (v, miss) in enumerate(zip(raw, missing)):
                    k = vocab.get(st["impute"] if miss else v)
                    if k is not None:
                        onehot[i, k] = 1.0
                blocks.append(onehot)
        X = np.hstack(blocks) if blocks else np.zeros((n, 0))
        return X, self.feature_names

    def target_values(self, rows: Sequence[Sequence[str]]) -> list[str]:
        if self.target is None:
            raise SchemaError("plan has no target column")
        j = self._index(self.target)
        return [r[j].strip() for r in rows]

    # serialization

    def to_dict(self) -> dict:
        return {
            "format": "deepcae-plan",
            "format_version": PLAN_FORMAT_VERSION,
            "columns": [{"name": c.name, "kind": c.kind, "missing_policy": c.missing_policy,
                         "state": self.state.get(c.name, {})} for c in self.schema],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessPlan":
        if d.get("format") != "deepcae-plan":
            raise SchemaError("not a preprocessing plan file")
        if d.get("format_version") != PLAN_FORMAT_VERSION:
            raise SchemaError(f"unsupported plan format version {d.get('format_version')}")
        schema = [ColumnSchema(c["name"], c["kind"], c["missing_policy"]) for c in d["columns"]]
        return cls([c.name for c in schema], schema, {c["name"]: c["state"] for c in d["columns"]})

    @classmethod
    def loads(cls, text: str) -> "PreprocessPlan":
        return cls.from_dict(json.loads(text))


def split_indices(n: int, test_fraction: float, seed: int,
                  labels: Sequence | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split, stratified by ``labels`` when given.

    Per-class test counts use largest-remainder rounding, so the test size is
    ``round(n * test_fraction)`` and each class is within one row of its
    exact share. Falls back to an unstratified split when some class has
    fewer than two rows.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n_test = int(math.floor(n * test_fraction + 0.5))
    if labels is not None:
        classes = sorted(set(labels))
        members = {c: [i for i, y in enumerate(labels) if y == c] for c in classes}
        if min(len(m) for m in members.values()) < 2:
            log.warning("too few rows per class for a stratified split; using an unstratified split")
            labels = None
    if labels is None:
        perm = rng.permutation(n)
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])
    exact = np.array([len(members[c]) * test_fraction for c in classes])
    counts = np.floor(exact).astype(int)
    short = n_test - counts.sum()
    for k in np.argsort(-(exact - counts), kind="stable")[:max(short, 0)]:
        counts[k] += 1
    train, test = [], []
    for c, k in zip(classes, counts):
        idx = np.array(members[c])[rng.permutation(len(members[c]))]
        test += list(idx[:k])
        train += list(idx[k:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def train_test_split(rows: Sequence, test_fraction: float = 0.2, seed: int = 0,
                     labels: Sequence | None = None) -> tuple[list, list]:
    train, test = split_indices(len(rows), test_fraction, seed, labels)
    return [rows[i] for i in train], [rows[i] for i in test]
