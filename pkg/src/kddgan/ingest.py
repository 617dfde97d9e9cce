"""Reading and cleaning NSL-KDD connection records.

A :class:`TabularDataset` is stored column-wise: continuous columns are
``float64`` arrays (NaN marks a missing cell), categorical columns are object
arrays of ``str`` (``None`` marks a missing cell). Numeric cells whose text
could not be parsed keep their original token so that :func:`clean` can tell a
sentinel such as ``*`` apart from a genuinely empty cell.
"""
from __future__ import annotations

import io
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable, Iterator, Mapping

import numpy as np

logger = logging.getLogger(__name__)

KINDS = ("continuous", "categorical", "label")
DEFAULT_SENTINELS = frozenset({"*", "99999"})
MISSING_TOKENS = frozenset({"", "nan", "NaN", "NA", "?"})
DEFAULT_KEY = "*"


class ParseError(ValueError):
    """Raised for malformed NSL-KDD input."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptySourceError(ParseError):
    def __init__(self):
        super().__init__("empty source")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    position: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown column kind {self.kind!r} for {self.name!r}")


def validate_schema(schema: Iterable[ColumnSpec]) -> tuple[ColumnSpec, ...]:
    schema = tuple(schema)
    positions = sorted(c.position for c in schema)
    if positions != list(range(len(schema))):
        raise ValueError("column positions must be unique and contiguous from 0")
    if sum(c.kind == "label" for c in schema) != 1:
        raise ValueError("schema must contain exactly one label column")
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise ValueError("duplicate column names in schema")
    return tuple(sorted(schema, key=lambda c: c.position))


def load_schema(path: str | os.PathLike | None = None) -> tuple[ColumnSpec, ...]:
    """Read a ``<name> <kind>`` per line schema file (the built-in one by default)."""
    if path is None:
        text = resources.files("kddgan").joinpath("data/nslkdd_schema.txt").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    specs = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"bad schema line: {raw!r}")
        specs.append(ColumnSpec(parts[0], parts[1], len(specs)))
    return validate_schema(specs)


def load_label_map(path: str | os.PathLike | None = None) -> dict[str, str]:
    """Read ``raw = report`` lines; the key ``*`` is the default bucket."""
    if path is None:
        text = resources.files("kddgan").joinpath("data/label_map.txt").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    mapping: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad label-map line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        mapping[key] = value
    return mapping


@dataclass(frozen=True, eq=False)
class TabularDataset:
    schema: tuple[ColumnSpec, ...]
    columns: Mapping[str, np.ndarray]
    labels: np.ndarray
    provenance: str = ""
    # column name -> {row index: original token} for unparseable numeric cells
    tokens: Mapping[str, Mapping[int, str]] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        for spec in self.feature_specs:
            col = self.columns[spec.name]
            if len(col) != n:
                raise ValueError(f"column {spec.name!r} has {len(col)} cells, expected {n}")
            col.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_specs(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.schema if c.kind != "label")

    @property
    def label_spec(self) -> ColumnSpec:
        return next(c for c in self.schema if c.kind == "label")

    def column(self, name: str) -> np.ndarray:
        if name == self.label_spec.name:
            return self.labels
        try:
            return self.columns[name]
        except KeyError:
            raise KeyError(f"unknown column {name!r}") from None

    def row(self, i: int) -> list:
        """Cells of row ``i`` in schema order (the label included)."""
        out = []
        for spec in self.schema:
            if spec.kind == "label":
                out.append(self.labels[i])
            else:
                value = self.columns[spec.name][i]
                out.append(self.tokens.get(spec.name, {}).get(i, value))
        return out

    @property
    def rows(self) -> Iterator[list]:
        return (self.row(i) for i in range(len(self)))

    def take(self, indices) -> "TabularDataset":
        """Subset of rows, in the given order."""
        indices = np.asarray(indices, dtype=np.intp)
        pos = {int(old): new for new, old in enumerate(indices)}
        tokens = {}
        for name, cells in self.tokens.items():
            kept = {pos[i]: tok for i, tok in cells.items() if i in pos}
            if kept:
                tokens[name] = kept
        return TabularDataset(
            schema=self.schema,
            columns={k: v[indices].copy() for k, v in self.columns.items()},
            labels=self.labels[indices].copy(),
            provenance=self.provenance,
            tokens=tokens,
        )

    def missing_mask(self) -> np.ndarray:
        mask = np.array([lab is None for lab in self.labels], dtype=bool)
        for spec in self.feature_specs:
            col = self.columns[spec.name]
            if spec.kind == "continuous":
                mask |= np.isnan(col)
            else:
                mask |= np.array([v is None for v in col], dtype=bool)
        return mask


@dataclass(frozen=True)
class ClassHistogram:
    entries: dict[str, int]
    total: int

    def to_csv(self) -> str:
        lines = ["class,count"]
        lines += [f"{name},{count}" for name, count in self.entries.items()]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CleanReport:
    rows_in: int
    rows_dropped: int
    cells_replaced: int

    def as_dict(self) -> dict:
        return {
            "rows_in": self.rows_in,
            "rows_dropped": self.rows_dropped,
            "cells_replaced": self.cells_replaced,
        }


def _read_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_float(token: str) -> float | None:
    try:
        value = float(token)
    except ValueError:
        return None
    return value


def parse_nslkdd(
    source: bytes | str | IO,
    schema: Iterable[ColumnSpec] | None = None,
    provenance: str = "",
) -> TabularDataset:
    """Parse comma-separated NSL-KDD records.

    ``source`` is the file content (bytes or text) or a readable stream. Each
    line carries ``len(schema)`` fields, or one more: a trailing difficulty
    score, which is discarded.
    """
    schema = validate_schema(schema) if schema is not None else load_schema()
    width = len(schema)
    lines = [ln for ln in _read_text(source).splitlines() if ln.strip()]
    if not lines:
        raise EmptySourceError()

    cells: list[list[str]] = [[] for _ in range(width)]
    for lineno, line in enumerate(lines, start=1):
        parts = line.split(",")
        if len(parts) not in (width, width + 1):
            raise ParseError(
                f"expected {width} or {width + 1} fields, found {len(parts)}", line=lineno
            )
        for j in range(width):
            cells[j].append(parts[j].strip())

    columns: dict[str, np.ndarray] = {}
    tokens: dict[str, dict[int, str]] = {}
    labels = None
    for spec in schema:
        raw = cells[spec.position]
        if spec.kind == "label":
            labels = np.array([None if t in MISSING_TOKENS else t for t in raw], dtype=object)
        elif spec.kind == "categorical":
            columns[spec.name] = np.array(
                [None if t in MISSING_TOKENS else t for t in raw], dtype=object
            )
        else:
            values = np.empty(len(raw), dtype=np.float64)
            odd: dict[int, str] = {}
            for i, tok in enumerate(raw):
                v = None if tok in MISSING_TOKENS else _parse_float(tok)
                if v is None:
                    values[i] = np.nan
                    if tok not in MISSING_TOKENS:
                        odd[i] = tok
                else:
                    values[i] = v
            columns[spec.name] = values
            if odd:
                tokens[spec.name] = odd
    return TabularDataset(schema, columns, labels, provenance=provenance, tokens=tokens)


def read_nslkdd(path: str | os.PathLike, schema=None) -> TabularDataset:
    with open(path, "rb") as fh:
        return parse_nslkdd(fh, schema=schema, provenance=os.fspath(path))


def _format_number(v: float) -> str:
    if np.isnan(v):
        return ""
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def to_nslkdd(ds: TabularDataset) -> str:
    """Serialize to the 42-field text form; numbers are written at full precision."""
    cols = []
    for spec in ds.schema:
        if spec.kind == "label":
            cols.append(["" if v is None else v for v in ds.labels])
        elif spec.kind == "categorical":
            cols.append(["" if v is None else v for v in ds.columns[spec.name]])
        else:
            odd = ds.tokens.get(spec.name, {})
            col = [_format_number(float(v)) for v in ds.columns[spec.name]]
            for i, tok in odd.items():
                col[i] = tok
            cols.append(col)
    buf = io.StringIO()
    for row in zip(*cols):
        buf.write(",".join(row))
        buf.write("\n")
    return buf.getvalue()


def clean(
    ds: TabularDataset,
    sentinels: Iterable[str] = DEFAULT_SENTINELS,
    drop_missing: bool = True,
) -> tuple[TabularDataset, CleanReport]:
    """Replace sentinel cells by 0 and drop rows that still have missing cells.

    Sentinels match whole cells only. For continuous columns a numeric
    sentinel (``"99999"``) matches cells whose parsed value equals it, and a
    non-numeric one (``"*"``) matches the preserved unparseable token.
    """
    sentinels = frozenset(sentinels)
    numeric_sentinels = {v for v in map(_parse_float, sentinels) if v is not None}
    columns: dict[str, np.ndarray] = {}
    tokens: dict[str, dict[int, str]] = {}
    replaced = 0
    for spec in ds.feature_specs:
        col = ds.columns[spec.name]
        if spec.kind == "categorical":
            hit = np.array([v in sentinels for v in col], dtype=bool)
            new = col.copy()
            new[hit] = "0"
        else:
            hit = np.isin(col, list(numeric_sentinels)) if numeric_sentinels else np.zeros(len(col), bool)
            odd = dict(ds.tokens.get(spec.name, {}))
            for i, tok in list(odd.items()):
                if tok in sentinels:
                    hit[i] = True
                    del odd[i]
            new = col.copy()
            new[hit] = 0.0
            if odd:
                tokens[spec.name] = odd
        replaced += int(hit.sum())
        columns[spec.name] = new

    out = TabularDataset(ds.schema, columns, ds.labels.copy(), ds.provenance, tokens)
    dropped = 0
    if drop_missing:
        missing = out.missing_mask()
        dropped = int(missing.sum())
        if dropped:
            out = out.take(np.flatnonzero(~missing))
    report = CleanReport(rows_in=len(ds), rows_dropped=dropped, cells_replaced=replaced)
    logger.info("clean: %d rows in, %d dropped, %d cells replaced", len(ds), dropped, replaced)
    return out, report


def cardinality(ds: TabularDataset, column: str) -> int:
    """Number of distinct non-missing values in ``column``."""
    col = ds.column(column)
    if col.dtype == object:
        return len({v for v in col if v is not None})
    return int(np.unique(col[~np.isnan(col)]).size)


def class_distribution(ds: TabularDataset) -> ClassHistogram:
    counts = Counter(lab for lab in ds.labels if lab is not None)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ClassHistogram(entries=dict(ordered), total=sum(counts.values()))


def map_labels(
    ds: TabularDataset,
    mapping: Mapping[str, str],
    keep: Iterable[str] | None = None,
) -> tuple[TabularDataset, dict[str, int]]:
    """Relabel rows through ``mapping`` and drop those outside ``keep``.

    Returns the new dataset and the number of dropped rows per mapped label.
    ``keep=None`` keeps every mapped label.
    """
    default = mapping.get(DEFAULT_KEY)
    unmapped = sorted({lab for lab in ds.labels if lab not in mapping} - {None})
    if unmapped and default is None:
        raise KeyError(f"labels without a mapping and no default: {', '.join(unmapped)}")
    mapped = np.array([mapping.get(lab, default) for lab in ds.labels], dtype=object)
    if keep is None:
        mask = np.ones(len(mapped), dtype=bool)
    else:
        keep = set(keep)
        mask = np.array([m in keep for m in mapped], dtype=bool)
    dropped = dict(sorted(Counter(mapped[~mask]).items()))
    relabeled = TabularDataset(ds.schema, dict(ds.columns), mapped, ds.provenance, ds.tokens)
    out = relabeled.take(np.flatnonzero(mask))
    return out, dropped
