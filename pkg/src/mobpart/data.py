"""Typed dataset container, CSV ingestion and role mapping.

A :class:`Dataset` is immutable after construction. Row subsets are plain
sorted integer index arrays (``RowSet``); every fitting and testing routine
takes such an array rather than a copied sub-dataset.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

KINDS = ("continuous", "ordinal", "nominal", "time", "event")
MISSING_TOKENS = ("", "NA")

FAMILY_ENDPOINTS = {
    "linear": ("response",),
    "gaussian-log": ("response", "offset"),
    "polr": ("item",),
    "polr-stratified": ("items",),
    "weibull": ("time", "event"),
    "cox": ("time", "event"),
}


class DataError(ValueError):
    """Raised for malformed data files or schema violations."""


class RoleError(ValueError):
    """Raised when a role assignment does not fit the dataset."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    values: np.ndarray
    missing: np.ndarray
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        values = np.asarray(self.values, dtype=float)
        missing = np.asarray(self.missing, dtype=bool)
        if values.shape != missing.shape or values.ndim != 1:
            raise DataError(f"column {self.name!r}: values and missing mask differ in shape")
        values = np.where(missing, np.nan, values)
        ok = ~missing
        if self.kind in ("ordinal", "nominal"):
            v = values[ok]
            if np.any((v < 0) | (v >= len(self.levels)) | (v != np.round(v))):
                raise DataError(f"column {self.name!r}: level index out of range")
        elif self.kind == "time":
            bad = np.flatnonzero(ok & (values < 0))
            if bad.size:
                raise DataError(f"column {self.name!r}: negative time in row {bad[0] + 1}")
        elif self.kind == "event":
            bad = np.flatnonzero(ok & (values != 0) & (values != 1))
            if bad.size:
                raise DataError(f"column {self.name!r}: event indicator not 0/1 in row {bad[0] + 1}")
        values.setflags(write=False)
        missing = missing.copy()
        missing.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "levels", tuple(str(l) for l in self.levels))

    def __len__(self):
        return self.values.size

    @property
    def categorical(self) -> bool:
        return self.kind in ("ordinal", "nominal")

    def label(self, value: float) -> str:
        """Text form of a single (non-missing) value."""
        if self.categorical:
            return self.levels[int(value)]
        return format_number(value)

    def take(self, rows) -> "Column":
        rows = np.asarray(rows, dtype=int)
        return Column(self.name, self.kind, self.values[rows], self.missing[rows], self.levels)


def format_number(x: float) -> str:
    return "%.17g" % x


class Dataset:
    """Ordered collection of equally long typed columns."""

    def __init__(self, columns: Iterable[Column]):
        self._columns: dict[str, Column] = {}
        n = None
        for col in columns:
            if col.name in self._columns:
                raise DataError(f"duplicate column name {col.name!r}")
            if n is not None and len(col) != n:
                raise DataError(f"column {col.name!r} has {len(col)} rows, expected {n}")
            n = len(col)
            self._columns[col.name] = col
        self.n_rows = 0 if n is None else n

    def __getitem__(self, name: str) -> Column:
        try:
            return self._columns[name]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self._columns

    def __len__(self):
        return self.n_rows

    @property
    def names(self) -> list[str]:
        return list(self._columns)

    @property
    def columns(self) -> list[Column]:
        return list(self._columns.values())

    def values(self, name: str) -> np.ndarray:
        return self[name].values

    def all_rows(self) -> np.ndarray:
        return np.arange(self.n_rows)

    def subset(self, rows) -> "Dataset":
        """Physically copied sub-dataset."""
        return Dataset(c.take(rows) for c in self._columns.values())

    @classmethod
    def from_arrays(cls, data: Mapping[str, Sequence], kinds: Mapping[str, str] | None = None,
                    levels: Mapping[str, Sequence[str]] | None = None) -> "Dataset":
        """Build from numeric arrays; NaN marks a missing value."""
        kinds = kinds or {}
        levels = levels or {}
        cols = []
        for name, vals in data.items():
            v = np.asarray(vals, dtype=float)
            cols.append(Column(name, kinds.get(name, "continuous"), v, np.isnan(v),
                               tuple(levels.get(name, ()))))
        return cls(cols)


def parse_schema(schema: Mapping) -> dict[str, tuple[str, tuple[str, ...]]]:
    """Normalise a schema mapping ``name -> kind`` or ``name -> {"kind", "levels"}``."""
    out = {}
    for name, spec in schema.items():
        if isinstance(spec, str):
            kind, levels = spec, ()
        elif isinstance(spec, Mapping):
            kind = spec.get("kind")
            levels = tuple(str(l) for l in spec.get("levels", ()))
        else:
            raise DataError(f"schema entry for {name!r} must be a string or an object")
        if kind not in KINDS:
            raise DataError(f"schema entry for {name!r}: unknown kind {kind!r}")
        if kind in ("ordinal", "nominal"):
            if not levels:
                raise DataError(f"schema entry for {name!r}: {kind} columns need declared levels")
            if len(set(levels)) != len(levels):
                raise DataError(f"schema entry for {name!r}: repeated level label")
        out[name] = (kind, levels)
    return out


def _read_rows(text: str) -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty file") from None
    rows = [r for r in reader if r]
    return header, rows


def load_csv(path, schema: Mapping) -> Dataset:
    """Read a comma separated file with a header row.

    Empty fields and ``NA`` are missing. Columns keep the file's order;
    columns absent from ``schema`` are ignored and schema columns absent from
    the file are an error.
    """
    kinds = parse_schema(schema)
    text = Path(path).read_text(encoding="utf-8-sig")
    header, rows = _read_rows(text)
    seen = set()
    for h in header:
        if h in seen:
            raise DataError(f"duplicate column name {h!r}")
        seen.add(h)
    for name in kinds:
        if name not in seen:
            raise DataError(f"column {name!r} declared in schema but missing from header")
    pos = {h: i for i, h in enumerate(header)}
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, found {len(r)}")

    cols = []
    for name in (h for h in header if h in kinds):
        kind, levels = kinds[name]
        j = pos[name]
        n = len(rows)
        values = np.full(n, np.nan)
        missing = np.zeros(n, dtype=bool)
        index = {l: k for k, l in enumerate(levels)}
        for i, r in enumerate(rows):
            cell = r[j].strip()
            if cell in MISSING_TOKENS:
                missing[i] = True
                continue
            if kind in ("ordinal", "nominal"):
                if cell not in index:
                    raise DataError(f"row {i + 1}, column {name!r}: unknown level {cell!r}")
                values[i] = index[cell]
            else:
                try:
                    values[i] = float(cell)
                except ValueError:
                    raise DataError(f"row {i + 1}, column {name!r}: cannot parse {cell!r}") from None
                if not math.isfinite(values[i]):
                    raise DataError(f"row {i + 1}, column {name!r}: non-finite value {cell!r}")
        cols.append(Column(name, kind, values, missing, levels))
    return Dataset(cols)


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset.names)
    cols = dataset.columns
    for i in range(dataset.n_rows):
        w.writerow("NA" if c.missing[i] else c.label(c.values[i]) for c in cols)
    return buf.getvalue()


def write_csv(dataset: Dataset, path) -> None:
    """Inverse of :func:`load_csv`; floats are written with 17 significant digits."""
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8")


def schema_of(dataset: Dataset) -> dict:
    """Schema document that reloads ``dataset`` with :func:`load_csv`."""
    out = {}
    for c in dataset.columns:
        out[c.name] = {"kind": c.kind, "levels": list(c.levels)} if c.categorical else c.kind
    return out


def complete_cases(dataset: Dataset, columns: Iterable[str], rows=None) -> np.ndarray:
    """Rows (optionally within ``rows``) with no missing value in any of ``columns``."""
    rows = dataset.all_rows() if rows is None else np.asarray(rows, dtype=int)
    ok = np.ones(rows.size, dtype=bool)
    for name in columns:
        ok &= ~dataset[name].missing[rows]
    return rows[ok]


@dataclass(frozen=True)
class RoleMap:
    """Assignment of dataset columns to model roles.

    ``endpoint`` keys depend on the family: ``response`` (linear, plus
    ``offset`` for gaussian-log, holding the log-scale offset), ``item``
    (polr), ``items`` as a list of ``[item6, item0]`` pairs
    (polr-stratified), ``time`` and ``event`` (weibull, cox). The linear
    family optionally takes ``strata``, a list of covariate columns.
    """

    family: str
    endpoint: Mapping
    treatment: str
    partitioning: tuple[str, ...] = ()
    strata: tuple[str, ...] = field(default=())

    def endpoint_columns(self) -> list[str]:
        ep = self.endpoint
        if self.family == "polr-stratified":
            return [c for pair in ep["items"] for c in pair]
        return [ep[k] for k in FAMILY_ENDPOINTS[self.family]]

    def model_columns(self) -> list[str]:
        """Columns that must be complete for an analysis row."""
        return self.endpoint_columns() + [self.treatment] + list(self.strata)


def validate_roles(dataset: Dataset, roles: RoleMap) -> None:
    if roles.family not in FAMILY_ENDPOINTS:
        raise RoleError(f"unknown model family {roles.family!r}", "roles.family")
    for key in FAMILY_ENDPOINTS[roles.family]:
        if key not in roles.endpoint:
            raise RoleError(f"endpoint for family {roles.family!r} needs {key!r}", f"roles.endpoint.{key}")
    if roles.family == "polr-stratified":
        items = roles.endpoint["items"]
        if not items or any(len(p) != 2 for p in items):
            raise RoleError("items must be a non-empty list of [item6, item0] pairs", "roles.endpoint.items")
    if not roles.treatment:
        raise RoleError("treatment column is required", "roles.treatment")
    model_cols = roles.model_columns()
    for name in model_cols + list(roles.partitioning):
        if name not in dataset:
            raise RoleError(f"column {name!r} not in dataset", "roles")
    overlap = set(roles.partitioning) & set(model_cols)
    if overlap:
        raise RoleError(f"partitioning variables overlap model columns: {sorted(overlap)}", "roles.partitioning")
    if len(set(roles.partitioning)) != len(roles.partitioning):
        raise RoleError("partitioning list contains duplicates", "roles.partitioning")
    trt = dataset[roles.treatment]
    v = trt.values[~trt.missing]
    if trt.categorical:
        if len(trt.levels) != 2:
            raise RoleError("treatment column must have exactly two levels", "roles.treatment")
    elif not np.all((v == 0) | (v == 1)):
        raise RoleError("treatment column must be coded 0/1", "roles.treatment")
    if np.unique(v).size != 2:
        raise RoleError("treatment column needs both arms present", "roles.treatment")
    ep = roles.endpoint
    if roles.family in ("weibull", "cox"):
        ev = dataset[ep["event"]].values
        if dataset[ep["event"]].kind not in ("event", "continuous") or not np.all(
            np.isnan(ev) | (ev == 0) | (ev == 1)
        ):
            raise RoleError("event column must be a 0/1 indicator", "roles.endpoint.event")
        t = dataset[ep["time"]].values
        if np.any(t[~np.isnan(t)] <= 0):
            raise RoleError("survival times must be positive", "roles.endpoint.time")
    if roles.family == "gaussian-log":
        y = dataset[ep["response"]].values
        if np.any(y[~np.isnan(y)] <= 0):
            raise RoleError("gaussian-log response must be positive", "roles.endpoint.response")


def treatment_vector(dataset: Dataset, name: str) -> np.ndarray:
    """Treatment contrast as 0/1 floats (second level = 1 for categorical columns)."""
    return np.asarray(dataset[name].values, dtype=float)
