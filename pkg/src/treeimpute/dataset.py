"""Columnar survey tables with per-cell missingness."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_MISSING_TOKENS = ("", "NA")

# Categorical columns with more levels than this are reported as
# identifier-like in summaries. They are still usable as predictors.
MANY_LEVELS = 32


class DataError(ValueError):
    """Raised for malformed input files or inconsistent tables."""


class VariableKind(enum.Enum):
    ORDINAL = "ordinal"
    CATEGORICAL = "categorical"

    @classmethod
    def parse(cls, value: "VariableKind | str") -> "VariableKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise DataError(f"unknown variable kind {value!r}") from None


@dataclass(frozen=True, eq=False)
class Column:
    """One variable.

    ``missing`` is the authoritative missingness marker. Ordinal values at
    missing cells hold NaN and categorical codes hold -1 so that the
    encoded arrays can be handed to the tree kernels without copying.
    """

    name: str
    kind: VariableKind
    values: np.ndarray
    missing: np.ndarray
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.values.shape != self.missing.shape or self.values.ndim != 1:
            raise DataError(f"column {self.name!r}: values and mask differ in shape")
        if self.kind is VariableKind.CATEGORICAL:
            obs = self.values[~self.missing]
            if obs.size and (obs.min() < 0 or obs.max() >= len(self.levels)):
                raise DataError(f"column {self.name!r}: code outside level dictionary")
        else:
            obs = self.values[~self.missing]
            if obs.size and not np.all(np.isfinite(obs)):
                raise DataError(f"column {self.name!r}: non-finite ordinal value")

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    @property
    def is_ordinal(self) -> bool:
        return self.kind is VariableKind.ORDINAL

    def labels(self) -> list:
        """Cell values as Python objects, ``None`` where missing."""
        if self.is_ordinal:
            return [None if m else float(v) for v, m in zip(self.values, self.missing)]
        return [None if m else self.levels[c] for c, m in zip(self.values, self.missing)]

    def take(self, rows: np.ndarray) -> "Column":
        return Column(self.name, self.kind, self.values[rows], self.missing[rows], self.levels)

    @classmethod
    def ordinal(cls, name: str, values: Sequence[float | None]) -> "Column":
        arr = np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64)
        miss = np.isnan(arr)
        return cls(name, VariableKind.ORDINAL, arr, miss)

    @classmethod
    def categorical(cls, name: str, values: Sequence[object | None],
                    levels: Sequence[str] | None = None) -> "Column":
        labels = [None if v is None else str(v) for v in values]
        if levels is None:
            levels = sorted({v for v in labels if v is not None}, key=_natural_key)
        levels = tuple(str(v) for v in levels)
        index = {lab: k for k, lab in enumerate(levels)}
        codes = np.empty(len(labels), dtype=np.int32)
        for i, lab in enumerate(labels):
            if lab is None:
                codes[i] = -1
            elif lab in index:
                codes[i] = index[lab]
            else:
                raise DataError(f"column {name!r}: label {lab!r} not in level dictionary")
        return cls(name, VariableKind.CATEGORICAL, codes, codes < 0, levels)


@dataclass(frozen=True, eq=False)
class Dataset:
    columns: tuple[Column, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        if cols:
            n = cols[0].values.shape[0]
            for c in cols:
                if c.values.shape[0] != n:
                    raise DataError(f"column {c.name!r} has {c.values.shape[0]} cells, expected {n}")
        index = {}
        for k, c in enumerate(cols):
            if c.name in index:
                raise DataError(f"duplicate column name {c.name!r}")
            index[c.name] = k
        object.__setattr__(self, "_index", index)

    @property
    def n_rows(self) -> int:
        return int(self.columns[0].values.shape[0]) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> Column:
        try:
            return self.columns[self._index[name]]
        except KeyError:
            raise KeyError(f"unknown column {name!r}") from None

    def position(self, name: str) -> int:
        return self._index[name]

    def take(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(tuple(c.take(rows) for c in self.columns))

    def select(self, names: Iterable[str]) -> "Dataset":
        return Dataset(tuple(self[n] for n in names))

    def drop(self, names: Iterable[str]) -> "Dataset":
        gone = set(names)
        return Dataset(tuple(c for c in self.columns if c.name not in gone))

    def replace(self, column: Column) -> "Dataset":
        cols = list(self.columns)
        cols[self._index[column.name]] = column
        return Dataset(tuple(cols))

    def missing_mask(self) -> np.ndarray:
        """Boolean (n_rows, n_columns) missingness matrix."""
        if not self.columns:
            return np.zeros((0, 0), dtype=bool)
        return np.column_stack([c.missing for c in self.columns])

    def summary(self) -> list[dict]:
        out = []
        for c in self.columns:
            row = {"name": c.name, "kind": c.kind.value, "n_missing": c.n_missing}
            if not c.is_ordinal:
                row["n_levels"] = len(c.levels)
                row["identifier_like"] = len(c.levels) > MANY_LEVELS
            out.append(row)
        return out


@dataclass(frozen=True, eq=False)
class FlagColumn:
    """Observed/missing indicator derived from a target column."""

    target: str
    missing: np.ndarray

    OBSERVED = 0
    MISSING = 1

    @property
    def codes(self) -> np.ndarray:
        return self.missing.astype(np.int32)

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    def to_column(self, name: str | None = None) -> Column:
        codes = self.codes
        return Column(name or self.target + "_", VariableKind.CATEGORICAL, codes,
                      np.zeros(codes.shape, dtype=bool), ("Observed", "Missing"))


def derive_flag(dataset: Dataset, target: str) -> FlagColumn:
    return FlagColumn(target, dataset[target].missing.copy())


def load_schema(path: str | Path) -> dict[str, VariableKind]:
    """Read a ``column = ordinal|categorical`` file (``#`` starts a comment)."""
    schema: dict[str, VariableKind] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'column = kind'")
        name, kind = (s.strip() for s in line.split("=", 1))
        if name in schema:
            raise DataError(f"{path}:{lineno}: column {name!r} declared twice")
        schema[name] = VariableKind.parse(kind)
    return schema


def _natural_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def load_csv(path: str | Path, schema: Mapping[str, VariableKind | str],
             missing_tokens: Iterable[str] = DEFAULT_MISSING_TOKENS) -> Dataset:
    """Parse a headed CSV file into a :class:`Dataset`.

    Every header name must appear in ``schema`` and vice versa. Cells equal
    to one of ``missing_tokens`` (after stripping whitespace) are missing.
    Categorical level dictionaries are built from the file and sorted,
    numerically when labels parse as numbers.
    """
    kinds = {k: VariableKind.parse(v) for k, v in schema.items()}
    tokens = {t.strip() for t in missing_tokens}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        extra = [h for h in header if h not in kinds]
        absent = [k for k in kinds if k not in header]
        if extra or absent:
            raise DataError(f"{path}: header/schema mismatch (not in schema: {extra}, "
                            f"not in header: {absent})")
        cells: list[list[str]] = [[] for _ in header]
        for rowno, row in enumerate(reader, 1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rowno} has {len(row)} fields, expected {len(header)}")
            for j, v in enumerate(row):
                cells[j].append(v.strip())

    columns = []
    for j, name in enumerate(header):
        raw = cells[j]
        if kinds[name] is VariableKind.ORDINAL:
            vals = np.empty(len(raw), dtype=np.float64)
            for i, v in enumerate(raw):
                if v in tokens:
                    vals[i] = np.nan
                    continue
                try:
                    x = float(v)
                except ValueError:
                    x = math.nan
                if not math.isfinite(x):
                    raise DataError(f"{path}: row {i + 1}, column {name!r}: "
                                    f"cannot parse {v!r} as a number")
                vals[i] = x
            columns.append(Column(name, VariableKind.ORDINAL, vals, np.isnan(vals)))
        else:
            labels = [None if v in tokens else v for v in raw]
            levels = sorted({v for v in labels if v is not None}, key=_natural_key)
            columns.append(Column.categorical(name, labels, levels))
    return Dataset(tuple(columns))


def _format_number(x: float) -> str:
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def write_csv(dataset: Dataset, path: str | Path, missing_token: str = "") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.names)
        text_cols = []
        for c in dataset.columns:
            if c.is_ordinal:
                text_cols.append([missing_token if m else _format_number(float(v))
                                  for v, m in zip(c.values, c.missing)])
            else:
                text_cols.append([missing_token if m else c.levels[v]
                                  for v, m in zip(c.values, c.missing)])
        writer.writerows(zip(*text_cols))


def write_schema(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text("".join(f"{c.name} = {c.kind.value}\n" for c in dataset.columns))


def sample_size(n_rows: int, fraction: float) -> int:
    """Round-half-up of ``fraction * n_rows``: 230, 461, 1152 from 4609."""
    return int(math.floor(fraction * n_rows + 0.5))


def srswor_sample(dataset: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    """Simple random sample without replacement of ``round(fraction * n)`` rows."""
    return dataset.take(srswor_rows(dataset.n_rows, fraction, rng))


def srswor_rows(n_rows: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if not (0.0 < fraction <= 1.0):
        raise DataError(f"sampling fraction must lie in (0, 1], got {fraction}")
    size = sample_size(n_rows, fraction)
    if size < 1:
        raise DataError(f"fraction {fraction} of {n_rows} rows rounds to an empty sample")
    return rng.permutation(n_rows)[:size]
