"""Columnar mixed-type tables: schema, CSV ingestion, cleaning and splitting.

Storage per column kind:

* ``numeric``     float64, masked cells hold NaN
* ``categorical``, ``binary``, ``target``, ``identifier``
                  object arrays of ``str``, masked cells hold ``None``
* ``date``        ``datetime64[D]``, masked cells hold NaT

The stored value of a masked cell is a placeholder and is never read.
Unknown categorical levels survive ingestion so that :func:`sanitize` can
report them.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateClass,
    DuplicateKey,
    InvalidChronology,
    NameCollision,
    ParseError,
    SchemaError,
    SchemaMismatch,
    TargetProtected,
    UnknownColumn,
    UnknownLevel,
)

KINDS = ("numeric", "categorical", "binary", "date", "identifier", "target")
GROUPS = ("Demographic", "MedicalHistory", "ApoE", "Neuropsych", "Blood", "Target", "Meta")
DEFAULT_MISSING_MARKERS = ("", "NA")
BINARY_LEVELS = ("0", "1")

RAW_DIAGNOSES = ("HC", "MCI", "AD")
BINARY_DIAGNOSES = ("HC", "NonHC")
POSITIVE_LABEL = "NonHC"

_STRINGLIKE = ("categorical", "binary", "target", "identifier")


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    group: str = "Meta"
    valid_range: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.group not in GROUPS:
            raise SchemaError(f"column {self.name!r}: unknown group {self.group!r}")
        rng = self.valid_range
        if rng is not None:
            rng = tuple(rng)
            object.__setattr__(self, "valid_range", rng)
        if self.kind == "numeric" and rng is not None:
            if len(rng) != 2 or float(rng[0]) > float(rng[1]):
                raise SchemaError(f"column {self.name!r}: bad numeric range {rng}")
        if self.kind in ("categorical", "target"):
            if not rng:
                raise SchemaError(f"column {self.name!r}: level list must be non-empty")
            if len(set(rng)) != len(rng):
                raise SchemaError(f"column {self.name!r}: duplicate levels {rng}")
            object.__setattr__(self, "valid_range", tuple(str(v) for v in rng))
        if self.kind == "binary" and rng is None:
            object.__setattr__(self, "valid_range", BINARY_LEVELS)

    @property
    def levels(self) -> tuple[str, ...] | None:
        if self.kind in ("categorical", "target", "binary"):
            return self.valid_range
        return None

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "group": self.group}
        if self.valid_range is not None:
            d["range"] = list(self.valid_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Column":
        unknown = set(d) - {"name", "kind", "range", "group"}
        if unknown:
            raise SchemaError(f"unknown schema keys {sorted(unknown)}")
        return cls(d["name"], d["kind"], d.get("group", "Meta"), d.get("range"))


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        # Partial tables (e.g. one file of a multi-file cohort) carry no target.
        if sum(c.kind == "target" for c in cols) > 1:
            raise SchemaError("at most one target column allowed")
        if sum(c.kind == "identifier" for c in cols) > 1:
            raise SchemaError("at most one identifier column allowed")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __contains__(self, name) -> bool:
        return any(c.name == name for c in self.columns)

    def __getitem__(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise UnknownColumn(name)

    @property
    def target(self) -> str:
        for c in self.columns:
            if c.kind == "target":
                return c.name
        raise SchemaMismatch("schema has no target column")

    @property
    def identifier(self) -> str | None:
        for c in self.columns:
            if c.kind == "identifier":
                return c.name
        return None

    def predictors(self) -> list[str]:
        """Columns usable as model inputs (numeric, binary, categorical)."""
        return [c.name for c in self.columns if c.kind in ("numeric", "binary", "categorical")]

    def by_group(self, *groups: str) -> list[str]:
        return [n for n in self.predictors() if self[n].group in groups]

    def replace(self, col: Column) -> "Schema":
        return Schema(tuple(col if c.name == col.name else c for c in self.columns))

    def to_dict(self) -> dict:
        return {"columns": [c.to_dict() for c in self.columns]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls(tuple(Column.from_dict(c) for c in d["columns"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Schema":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _placeholder_array(kind: str, n: int) -> np.ndarray:
    if kind == "numeric":
        return np.full(n, np.nan)
    if kind == "date":
        return np.full(n, np.datetime64("NaT"), dtype="datetime64[D]")
    return np.full(n, None, dtype=object)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Table:
    """Immutable column store with a per-cell missingness mask."""

    schema: Schema
    columns: dict
    missing: dict
    n_rows: int = field(default=-1)

    def __post_init__(self):
        n = self.n_rows
        if n < 0:
            n = len(next(iter(self.columns.values()))) if self.columns else 0
            object.__setattr__(self, "n_rows", n)
        if set(self.columns) != set(self.schema.names) or set(self.missing) != set(self.schema.names):
            raise SchemaMismatch("column data does not match schema")
        cols, miss = {}, {}
        for c in self.schema.columns:
            v = self.columns[c.name]
            m = np.asarray(self.missing[c.name], dtype=bool)
            if len(v) != n or len(m) != n:
                raise SchemaMismatch(f"column {c.name!r} has wrong length")
            if c.kind == "numeric":
                v = np.asarray(v, dtype=np.float64).copy()
                v[m] = np.nan
                if not np.all(np.isfinite(v[~m])):
                    raise SchemaMismatch(f"column {c.name!r} holds non-finite values")
            elif c.kind == "date":
                v = np.asarray(v, dtype="datetime64[D]").copy()
                v[m] = np.datetime64("NaT")
            else:
                v = np.array(v, dtype=object)
                v[m] = None
            cols[c.name] = _freeze(v)
            miss[c.name] = _freeze(m.copy())
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "missing", miss)

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise UnknownColumn(name)
        return self.columns[name]

    @property
    def names(self) -> list[str]:
        return self.schema.names

    def take(self, rows) -> "Table":
        rows = np.asarray(rows, dtype=np.intp)
        return Table(
            self.schema,
            {k: v[rows] for k, v in self.columns.items()},
            {k: m[rows] for k, m in self.missing.items()},
            len(rows),
        )

    def select(self, names: Sequence[str]) -> "Table":
        for n in names:
            if n not in self.schema:
                raise UnknownColumn(n)
        schema = Schema(tuple(c for c in self.schema.columns if c.name in set(names)))
        return Table(
            schema,
            {n: self.columns[n] for n in schema.names},
            {n: self.missing[n] for n in schema.names},
            self.n_rows,
        )

    def with_column(self, col: Column, values, missing) -> "Table":
        """Return a copy with ``col`` appended, or replaced if it already exists."""
        if col.name in self.schema:
            schema = self.schema.replace(col)
        else:
            schema = Schema(self.schema.columns + (col,))
        cols = dict(self.columns)
        miss = dict(self.missing)
        cols[col.name] = values
        miss[col.name] = missing
        return Table(schema, cols, miss, self.n_rows)

    def concat_rows(self, other: "Table") -> "Table":
        if other.schema != self.schema:
            raise SchemaMismatch("cannot stack tables with different schemas")
        return Table(
            self.schema,
            {k: np.concatenate([self.columns[k], other.columns[k]]) for k in self.names},
            {k: np.concatenate([self.missing[k], other.missing[k]]) for k in self.names},
            self.n_rows + other.n_rows,
        )

    def n_missing(self) -> int:
        return int(sum(m.sum() for m in self.missing.values()))

    def equals(self, other: "Table") -> bool:
        """Value-and-mask equality; masked placeholders are ignored."""
        if self.schema != other.schema or self.n_rows != other.n_rows:
            return False
        for c in self.schema.columns:
            m = self.missing[c.name]
            if not np.array_equal(m, other.missing[c.name]):
                return False
            a, b = self.columns[c.name][~m], other.columns[c.name][~m]
            if c.kind == "numeric":
                if not np.array_equal(a.view(np.int64), b.view(np.int64)):
                    return False
            elif not np.array_equal(a, b):
                return False
        return True

    def class_counts(self) -> dict[str, int]:
        t = self.schema.target
        col = self.schema[t]
        vals = self.columns[t][~self.missing[t]]
        return {lvl: int(np.sum(vals == lvl)) for lvl in col.levels}


# ---------------------------------------------------------------- CSV I/O


def _parse_cell(kind: str, raw: str, row: int, name: str):
    if kind == "numeric":
        try:
            v = float(raw)
        except ValueError:
            raise ParseError(row, name, raw) from None
        if not math.isfinite(v):
            raise ParseError(row, name, raw, "non-finite")
        return v
    if kind == "date":
        try:
            return np.datetime64(_dt.date.fromisoformat(raw.strip()), "D")
        except ValueError:
            raise ParseError(row, name, raw, "expected YYYY-MM-DD") from None
    return raw


def load_csv(path, schema: Schema, missing_markers: Iterable[str] = DEFAULT_MISSING_MARKERS) -> Table:
    """Read a header-first CSV file into a :class:`Table`.

    Row numbers in :class:`ParseError` count the header as row 1.
    """
    markers = set(missing_markers)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        if sorted(header) != sorted(schema.names) or len(set(header)) != len(header):
            missing = sorted(set(schema.names) - set(header))
            extra = sorted(set(header) - set(schema.names))
            raise SchemaMismatch(f"{path}: header mismatch (missing {missing}, unexpected {extra})")
        pos = {n: header.index(n) for n in schema.names}
        raw_rows = [r for r in reader if r]
    n = len(raw_rows)
    cols, miss = {}, {}
    for c in schema.columns:
        vals = _placeholder_array(c.kind, n)
        m = np.zeros(n, dtype=bool)
        j = pos[c.name]
        for i, r in enumerate(raw_rows):
            if len(r) != len(header):
                raise ParseError(i + 2, c.name, ",".join(r), "wrong field count")
            cell = r[j]
            if cell in markers:
                m[i] = True
            else:
                vals[i] = _parse_cell(c.kind, cell, i + 2, c.name)
        cols[c.name] = vals
        miss[c.name] = m
    return Table(schema, cols, miss, n)


def _format_cell(kind: str, v) -> str:
    if kind == "numeric":
        return repr(float(v))
    if kind == "date":
        return str(v)
    return str(v)


def write_csv(table: Table, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.names)
        kinds = [table.schema[n].kind for n in table.names]
        for i in range(table.n_rows):
            w.writerow(
                "NA" if table.missing[n][i] else _format_cell(k, table.columns[n][i])
                for n, k in zip(table.names, kinds)
            )


# ---------------------------------------------------------- merging etc.


@dataclass(frozen=True)
class JoinReport:
    rows_in: tuple[int, ...]
    rows_out: int

    @property
    def dropped(self) -> tuple[int, ...]:
        return tuple(n - self.rows_out for n in self.rows_in)


def _key_tuples(t: Table, key: Sequence[str]) -> list[tuple]:
    for k in key:
        if k not in t.schema:
            raise UnknownColumn(k)
    return [
        tuple(None if t.missing[k][i] else t.columns[k][i] for k in key)
        for i in range(t.n_rows)
    ]


def merge_on_key(tables: Sequence[Table], key: Sequence[str]) -> tuple[Table, JoinReport]:
    """Inner-join tables on ``key``; row order follows the first table."""
    key = list(key)
    seen_names = set(key)
    for t in tables:
        for n in t.names:
            if n in key:
                continue
            if n in seen_names:
                raise NameCollision(n)
            seen_names.add(n)
    lookups = []
    for t in tables:
        keys = _key_tuples(t, key)
        idx = {}
        for i, kt in enumerate(keys):
            if kt in idx:
                raise DuplicateKey(f"duplicate key {kt}")
            idx[kt] = i
        lookups.append((keys, idx))
    first_keys = lookups[0][0]
    rows = [[] for _ in tables]
    for i, kt in enumerate(first_keys):
        hits = [lk[1].get(kt) for lk in lookups]
        if all(h is not None for h in hits):
            for r, h in zip(rows, hits):
                r.append(h)
    columns = [tables[0].schema[k] for k in key]
    cols, miss = {}, {}
    for k in key:
        cols[k] = tables[0].columns[k][rows[0]]
        miss[k] = tables[0].missing[k][rows[0]]
    for t, r in zip(tables, rows):
        for c in t.schema.columns:
            if c.name in key:
                continue
            columns.append(c)
            cols[c.name] = t.columns[c.name][r]
            miss[c.name] = t.missing[c.name][r]
    merged = Table(Schema(tuple(columns)), cols, miss, len(rows[0]))
    return merged, JoinReport(tuple(t.n_rows for t in tables), merged.n_rows)


def _whole_years(birth: _dt.date, exam: _dt.date) -> int:
    years = exam.year - birth.year
    if (exam.month, exam.day) < (birth.month, birth.day):
        years -= 1
    return years


def derive_age(table: Table, birthdate_col: str, examdate_col: str, name: str = "age") -> Table:
    """Append whole years elapsed between two date columns.

    Rows whose exam date precedes the birth date are masked and reported
    through an :class:`InvalidChronology` warning.
    """
    for c in (birthdate_col, examdate_col):
        if table.schema[c].kind != "date":
            raise SchemaMismatch(f"{c!r} is not a date column")
    b, e = table[birthdate_col], table[examdate_col]
    m = table.missing[birthdate_col] | table.missing[examdate_col]
    age = np.full(table.n_rows, np.nan)
    bad = []
    for i in np.flatnonzero(~m):
        bd, ed = b[i].astype(_dt.date), e[i].astype(_dt.date)
        if ed < bd:
            bad.append(int(i))
            continue
        age[i] = _whole_years(bd, ed)
    mask = m.copy()
    mask[bad] = True
    if bad:
        warnings.warn(InvalidChronology(bad), stacklevel=2)
    col = Column(name, "numeric", "Demographic", (0.0, 130.0))
    return table.with_column(col, age, mask)


@dataclass
class SanitizeReport:
    replaced: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.replaced.values())


def _invalid_cells(c: Column, vals: np.ndarray, m: np.ndarray) -> np.ndarray:
    bad = np.zeros(len(vals), dtype=bool)
    if c.valid_range is None or c.kind in ("date", "identifier"):
        return bad
    obs = ~m
    if c.kind == "numeric":
        lo, hi = float(c.valid_range[0]), float(c.valid_range[1])
        with np.errstate(invalid="ignore"):
            bad[obs] = (vals[obs] < lo) | (vals[obs] > hi)
    else:
        allowed = set(c.valid_range)
        bad[obs] = [v not in allowed for v in vals[obs]]
    return bad


def sanitize(table: Table, schema: Schema | None = None) -> tuple[Table, SanitizeReport]:
    """Mask every observed cell that falls outside its valid range or level set."""
    schema = schema or table.schema
    report = SanitizeReport()
    miss = dict(table.missing)
    for c in table.schema.columns:
        ref = schema[c.name] if c.name in schema else c
        bad = _invalid_cells(ref, table.columns[c.name], table.missing[c.name])
        if bad.any():
            report.replaced[c.name] = int(bad.sum())
            miss[c.name] = table.missing[c.name] | bad
    if not report.replaced:
        return table, report
    return Table(table.schema, dict(table.columns), miss, table.n_rows), report


def drop_columns(table: Table, names: Sequence[str], allow_target: bool = False) -> Table:
    names = list(names)
    for n in names:
        if n not in table.schema:
            raise UnknownColumn(n)
        if table.schema[n].kind == "target" and not allow_target:
            raise TargetProtected(f"refusing to drop target column {n!r}")
    if not names:
        return table
    return table.select([n for n in table.names if n not in set(names)])


def binarize_diagnosis(table: Table) -> Table:
    """Collapse HC/MCI/AD into HC versus NonHC."""
    t = table.schema.target
    col = table.schema[t]
    if set(col.levels) != set(RAW_DIAGNOSES):
        raise UnknownLevel(f"target levels {col.levels} are not {RAW_DIAGNOSES}")
    vals = table[t]
    m = table.missing[t]
    out = np.full(table.n_rows, None, dtype=object)
    for i in np.flatnonzero(~m):
        v = vals[i]
        if v == "HC":
            out[i] = "HC"
        elif v in ("MCI", "AD"):
            out[i] = POSITIVE_LABEL
        else:
            raise UnknownLevel(f"row {i}: unexpected diagnosis {v!r}")
    new = Column(t, "target", col.group, BINARY_DIAGNOSES)
    return table.with_column(new, out, m)


# ----------------------------------------------------------------- split


def stratified_counts(class_sizes: Sequence[int], train_fraction: float) -> list[int]:
    """Per-class train counts: floors of the exact quotas, topped up by largest remainder."""
    quotas = [s * train_fraction for s in class_sizes]
    counts = [int(math.floor(q)) for q in quotas]
    total = int(round(sum(class_sizes) * train_fraction))
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    k = 0
    while sum(counts) < total:
        i = order[k % len(order)]
        if counts[i] < class_sizes[i]:
            counts[i] += 1
        k += 1
    return counts


def split_indices(table: Table, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    t = table.schema.target
    if table.missing[t].any():
        raise DegenerateClass("target has masked cells")
    y = table[t]
    levels = table.schema[t].levels
    members = [np.flatnonzero(y == lvl) for lvl in levels]
    for lvl, idx in zip(levels, members):
        if len(idx) == 0:
            raise DegenerateClass(f"class {lvl!r} has no rows")
    counts = stratified_counts([len(m) for m in members], train_fraction)
    rng = np.random.default_rng(seed)
    train = []
    for idx, k in zip(members, counts):
        train.append(idx[rng.permutation(len(idx))[:k]])
    train_idx = np.sort(np.concatenate(train))
    test_mask = np.ones(table.n_rows, dtype=bool)
    test_mask[train_idx] = False
    return train_idx, np.flatnonzero(test_mask)


def split_stratified(table: Table, train_fraction: float = 0.7, seed: int = 0) -> tuple[Table, Table]:
    tr, te = split_indices(table, train_fraction, seed)
    return table.take(tr), table.take(te)


# --------------------------------------------------------------- scaling


@dataclass(frozen=True)
class ScalerParams:
    mean: dict[str, float]
    std: dict[str, float]


def fit_scaler(train: Table) -> ScalerParams:
    """Population (divide-by-n) mean and standard deviation per numeric column."""
    mean, std = {}, {}
    for c in train.schema.columns:
        if c.kind != "numeric":
            continue
        obs = train[c.name][~train.missing[c.name]]
        if len(obs) == 0:
            mean[c.name], std[c.name] = 0.0, 0.0
            continue
        mean[c.name] = float(obs.mean())
        std[c.name] = float(obs.std())
    return ScalerParams(mean, std)


def apply_scaler(table: Table, params: ScalerParams) -> Table:
    cols = dict(table.columns)
    schema = table.schema
    for name, mu in params.mean.items():
        if name not in table.schema:
            continue
        sd = params.std[name]
        if sd == 0.0:
            warnings.warn(f"column {name!r} is constant; scaled to zeros", RuntimeWarning, stacklevel=2)
            cols[name] = np.zeros(table.n_rows)
        else:
            cols[name] = (table[name] - mu) / sd
        # Scaled values no longer live on the instrument's scale.
        schema = schema.replace(Column(name, "numeric", schema[name].group, None))
    return Table(schema, cols, dict(table.missing), table.n_rows)


# --------------------------------------------------------- model inputs


def design_matrix(table: Table, features: Sequence[str] | None = None):
    """Encode predictors as a float matrix.

    Returns ``(X, n_levels)`` where ``n_levels[j]`` is 0 for ordered
    columns (numeric and binary) and the level count for categorical
    columns, whose cells hold the level code.  Masked cells become NaN.
    """
    features = list(features) if features is not None else table.schema.predictors()
    X = np.empty((table.n_rows, len(features)))
    n_levels = np.zeros(len(features), dtype=np.int64)
    for j, name in enumerate(features):
        c = table.schema[name]
        v, m = table[name], table.missing[name]
        if c.kind == "numeric":
            X[:, j] = v
        elif c.kind in ("binary", "categorical"):
            codes = {lvl: k for k, lvl in enumerate(c.levels)}
            col = np.full(table.n_rows, np.nan)
            for i in np.flatnonzero(~m):
                if v[i] not in codes:
                    raise UnknownLevel(f"{name!r}: level {v[i]!r} (run sanitize first)")
                col[i] = codes[v[i]]
            X[:, j] = col
            if c.kind == "categorical" and len(c.levels) > 2:
                n_levels[j] = len(c.levels)
        else:
            raise SchemaMismatch(f"{name!r} ({c.kind}) is not a predictor")
        X[m, j] = np.nan
    return X, n_levels


def target_codes(table: Table) -> tuple[np.ndarray, tuple[str, ...]]:
    t = table.schema.target
    levels = table.schema[t].levels
    if table.missing[t].any():
        raise DegenerateClass("target has masked cells")
    codes = {lvl: k for k, lvl in enumerate(levels)}
    try:
        y = np.array([codes[v] for v in table[t]], dtype=np.int64)
    except KeyError as exc:
        raise UnknownLevel(f"target level {exc.args[0]!r}") from None
    return y, levels
