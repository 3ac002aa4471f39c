"""Typed tabular data with human-readable column and value names.

A row is a tuple of feature values. Each value is one of

* ``float`` for numeric columns (always finite),
* ``str`` for categorical columns (never empty),
* ``None`` for a missing cell.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from tabser.errors import DataError, EmptyDataset, MissingColumn, ParseError

Value = Union[float, str, None]

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnSpec:
    """One column of a table.

    ``unit`` is an optional suffix shown after the value by the list-style
    serializations only (``Age: 30 years``).
    """

    raw_name: str
    display_name: str
    kind: str = CATEGORICAL
    value_display_map: Mapping[str, str] = field(default_factory=dict)
    unit: Optional[str] = None

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"column {self.raw_name!r}: unknown kind {self.kind!r}")
        if not self.display_name:
            raise DataError(f"column {self.raw_name!r}: empty display_name")
        object.__setattr__(self, "value_display_map", dict(self.value_display_map))

    @classmethod
    def from_dict(cls, d):
        return cls(
            raw_name=d["raw_name"],
            display_name=d.get("display_name") or d["raw_name"],
            kind=d.get("kind", CATEGORICAL),
            value_display_map=d.get("value_display_map") or {},
            unit=d.get("unit"),
        )

    def to_dict(self):
        d = {"raw_name": self.raw_name, "display_name": self.display_name, "kind": self.kind}
        if self.value_display_map:
            d["value_display_map"] = dict(self.value_display_map)
        if self.unit:
            d["unit"] = self.unit
        return d


@dataclass(frozen=True)
class Dataset:
    columns: tuple
    rows: tuple
    labels: tuple
    class_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        object.__setattr__(self, "labels", tuple(int(y) for y in self.labels))
        object.__setattr__(self, "class_names", tuple(self.class_names))

        names = [c.raw_name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("column raw_names are not unique")
        if len(self.rows) != len(self.labels):
            raise DataError(f"{len(self.rows)} rows but {len(self.labels)} labels")
        d = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != d:
                raise ParseError(f"expected {d} values, got {len(row)}", row=i)
            for col, v in zip(self.columns, row):
                _check_value(col, v, i)
        for i, y in enumerate(self.labels):
            if not 0 <= y < len(self.class_names):
                raise DataError(f"label {y} out of range at row {i}")

    @property
    def n(self):
        return len(self.rows)

    @property
    def d(self):
        return len(self.columns)

    def column_index(self, raw_name):
        for i, c in enumerate(self.columns):
            if c.raw_name == raw_name:
                return i
        raise MissingColumn(raw_name)

    def subset(self, indices):
        return replace(
            self,
            rows=[self.rows[i] for i in indices],
            labels=[self.labels[i] for i in indices],
        )


def _check_value(col, v, row):
    if v is None:
        return
    if col.kind == NUMERIC:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"non-numeric value {v!r}", row=row, column=col.raw_name)
        if not math.isfinite(v):
            raise ParseError(f"non-finite value {v!r}", row=row, column=col.raw_name)
    else:
        if not isinstance(v, str) or v == "":
            raise ParseError(f"bad categorical value {v!r}", row=row, column=col.raw_name)


def format_number(x):
    """Integers without a decimal point, otherwise the shortest round-trip form."""
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return repr(x)


def format_value(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return format_number(v)


def load_metadata(path_or_obj):
    """Read column metadata.

    Accepts either a bare JSON array of column objects or an object with
    ``columns`` and an optional ``class_names`` list. Returns
    ``(columns, class_names_or_None)``.
    """
    if isinstance(path_or_obj, (str, Path)):
        with open(path_or_obj, encoding="utf-8") as fh:
            obj = json.load(fh)
    else:
        obj = path_or_obj
    if isinstance(obj, list):
        cols, class_names = obj, None
    elif isinstance(obj, dict) and "columns" in obj:
        cols, class_names = obj["columns"], obj.get("class_names")
    else:
        raise DataError("metadata must be a list of columns or an object with 'columns'")
    specs = [ColumnSpec.from_dict(c) for c in cols]
    for spec in specs:
        if len(set(spec.value_display_map)) != len(spec.value_display_map):
            raise DataError(f"column {spec.raw_name!r}: duplicate display map keys")
    return specs, (list(class_names) if class_names else None)


def _parse_cell(text, col, row_no):
    if text.strip() == "":
        return None
    if col.kind == NUMERIC:
        try:
            x = float(text.strip())
        except ValueError:
            raise ParseError(f"non-numeric text {text!r}", row=row_no, column=col.raw_name) from None
        if not math.isfinite(x):
            raise ParseError(f"non-finite number {text!r}", row=row_no, column=col.raw_name)
        return x
    return text


def load_csv(path, metadata, label_column, class_names=None):
    """Load a CSV file into a :class:`Dataset`.

    ``metadata`` is a list of :class:`ColumnSpec` (or a path to the metadata
    JSON, in which case ``class_names`` may come from it). Column order
    follows the metadata, not the file. Row numbers in errors are 1-based
    data rows (the header is row 0).
    """
    if isinstance(metadata, (str, Path)):
        metadata, meta_classes = load_metadata(metadata)
        class_names = class_names or meta_classes
    metadata = list(metadata)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path}: no header row") from None
        records = list(reader)

    if label_column not in header:
        raise MissingColumn(f"label column {label_column!r} not in header")
    if len(set(header)) != len(header):
        raise MissingColumn("duplicate names in header")
    feature_header = [h for h in header if h != label_column]
    meta_names = [c.raw_name for c in metadata]
    missing = [n for n in meta_names if n not in header]
    if missing:
        raise MissingColumn(f"metadata columns not in header: {missing}")
    uncovered = [h for h in feature_header if h not in meta_names]
    if uncovered:
        raise MissingColumn(f"header columns without metadata: {uncovered}")

    pos = {h: i for i, h in enumerate(header)}
    label_pos = pos[label_column]
    rows, raw_labels = [], []
    for row_no, rec in enumerate(records, start=1):
        if not rec:
            continue
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(rec)}", row=row_no)
        rows.append(tuple(_parse_cell(rec[pos[c.raw_name]], c, row_no) for c in metadata))
        raw_labels.append(rec[label_pos])
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")

    if class_names is None:
        class_names = list(dict.fromkeys(raw_labels))
    index = {name: i for i, name in enumerate(class_names)}
    labels = []
    for row_no, lab in enumerate(raw_labels, start=1):
        if lab not in index:
            raise ParseError(f"unknown class {lab!r}", row=row_no, column=label_column)
        labels.append(index[lab])
    return Dataset(columns=metadata, rows=rows, labels=labels, class_names=class_names)


def write_csv(ds, path, label_column="label"):
    """Write ``ds`` back to CSV using raw column names and class-name labels."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([c.raw_name for c in ds.columns] + [label_column])
        for row, y in zip(ds.rows, ds.labels):
            w.writerow([format_value(v) for v in row] + [ds.class_names[y]])


def apply_display_maps(ds: Dataset) -> Dataset:
    """Replace categorical values by their display text; numerics pass through."""
    maps = [c.value_display_map if c.kind == CATEGORICAL else None for c in ds.columns]
    rows = [
        tuple(m.get(v, v) if (m and isinstance(v, str)) else v for m, v in zip(maps, row))
        for row in ds.rows
    ]
    return replace(ds, rows=rows)


def dataset_from_records(
    columns: Sequence[ColumnSpec],
    records: Sequence[Sequence[Value]],
    labels: Sequence[int],
    class_names: Optional[Sequence[str]] = None,
) -> Dataset:
    """Build a Dataset from Python values (ints are accepted for numerics)."""
    rows = [tuple(float(v) if isinstance(v, int) and not isinstance(v, bool) else v for v in r) for r in records]
    if class_names is None:
        class_names = [str(i) for i in range(max(labels) + 1)] if labels else []
    return Dataset(columns=columns, rows=rows, labels=labels, class_names=class_names)
