"""Template serializations of a single table row, plus the ablations.

Every function here is pure: the same columns, row and plan give the same
text byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from tabser.dataset import CATEGORICAL, NUMERIC, format_number, format_value
from tabser.errors import ArityMismatch, DataError

N_BINS = 10


@dataclass(frozen=True)
class SerializedExample:
    text: str
    serializer_id: str
    row_index: int = 0
    seed: Optional[int] = None

    def to_dict(self):
        return {
            "row_index": self.row_index,
            "serializer_id": self.serializer_id,
            "seed": self.seed,
            "text": self.text,
        }


def _check(cols, row):
    if len(cols) != len(row):
        raise ArityMismatch(f"{len(cols)} columns but {len(row)} values")


def _list_value(col, v):
    text = format_value(v)
    if v is not None and col.unit:
        text = f"{text} {col.unit}"
    return text


def _list_lines(names, cols, row):
    return "\n".join(f"- {name}: {_list_value(c, v)}" for name, c, v in zip(names, cols, row))


def list_template(cols, row, row_index=0) -> SerializedExample:
    """``- name: value`` lines in column order."""
    _check(cols, row)
    text = _list_lines([c.display_name for c in cols], cols, row)
    return SerializedExample(text, "list", row_index)


def text_template(cols, row, row_index=0) -> SerializedExample:
    _check(cols, row)
    parts = []
    for c, v in zip(cols, row):
        if v is None:
            parts.append(f"The {c.display_name} is.")
        else:
            parts.append(f"The {c.display_name} is {format_value(v)}.")
    return SerializedExample(" ".join(parts), "text", row_index)


def list_only_values(cols, row, row_index=0) -> SerializedExample:
    _check(cols, row)
    text = "\n".join(f"- {_list_value(c, v)}" for c, v in zip(cols, row))
    return SerializedExample(text, "list-values", row_index)


def list_short(cols, row, max_features=10, row_index=0) -> SerializedExample:
    _check(cols, row)
    k = max(0, max_features)
    text = _list_lines([c.display_name for c in cols[:k]], cols[:k], row[:k])
    return SerializedExample(text, "list-short", row_index)


@dataclass(frozen=True)
class PermutationPlan:
    """A dataset-wide relabelling used by the permutation ablations.

    ``name_permutation[i]`` is the column whose name is shown next to the
    value of column ``i``. ``value_permutations`` maps a column index either
    to a dict (categorical token -> token) or to a tuple of 10 bin indices
    (numeric bin -> bin). ``bin_edges`` holds the 11 edges per binned
    numeric column; constant numeric columns have no entry and pass through.
    """

    name_permutation: Optional[tuple] = None
    value_permutations: dict = field(default_factory=dict)
    bin_edges: dict = field(default_factory=dict)
    seed: Optional[int] = None


def _non_identity_permutation(rng, n):
    if n < 2:
        return np.arange(n)
    while True:
        p = rng.permutation(n)
        if not np.array_equal(p, np.arange(n)):
            return p


def uniform_bin_edges(lo, hi, n_bins=N_BINS):
    inner = [lo + (hi - lo) * i / n_bins for i in range(1, n_bins)]
    return (lo, *inner, hi)


def bin_index(edges, x):
    """Left-closed, right-open bins; the last bin also holds the maximum."""
    j = int(np.searchsorted(edges, x, side="right")) - 1
    return min(max(j, 0), len(edges) - 2)


def build_permutation_plan(ds, mode, seed) -> PermutationPlan:
    rng = np.random.default_rng(seed)
    if mode == "names":
        perm = _non_identity_permutation(rng, ds.d)
        return PermutationPlan(name_permutation=tuple(int(i) for i in perm), seed=seed)
    if mode != "values":
        raise DataError(f"unknown permutation mode {mode!r}")

    value_perms, edges = {}, {}
    for j, col in enumerate(ds.columns):
        observed = [row[j] for row in ds.rows if row[j] is not None]
        if col.kind == CATEGORICAL:
            domain = sorted(set(observed))
            p = _non_identity_permutation(rng, len(domain))
            value_perms[j] = {domain[i]: domain[int(p[i])] for i in range(len(domain))}
        elif col.kind == NUMERIC:
            if not observed or min(observed) == max(observed):
                continue
            edges[j] = uniform_bin_edges(min(observed), max(observed))
            p = _non_identity_permutation(rng, N_BINS)
            value_perms[j] = tuple(int(i) for i in p)
    return PermutationPlan(value_permutations=value_perms, bin_edges=edges, seed=seed)


def list_permuted_names(cols, row, plan, row_index=0) -> SerializedExample:
    _check(cols, row)
    perm = plan.name_permutation or tuple(range(len(cols)))
    names = [cols[perm[i]].display_name for i in range(len(cols))]
    return SerializedExample(_list_lines(names, cols, row), "list-permuted-names", row_index, plan.seed)


def permute_value(plan, j, v):
    """Image of value ``v`` of column ``j`` under ``plan``."""
    if v is None or j not in plan.value_permutations:
        return v
    mapping = plan.value_permutations[j]
    if isinstance(mapping, dict):
        return mapping.get(v, v)
    edges = plan.bin_edges[j]
    target = mapping[bin_index(edges, v)]
    return (edges[target] + edges[target + 1]) / 2


def list_permuted_values(cols, row, plan, row_index=0) -> SerializedExample:
    _check(cols, row)
    permuted = [permute_value(plan, j, v) for j, v in enumerate(row)]
    text = _list_lines([c.display_name for c in cols], cols, permuted)
    return SerializedExample(text, "list-permuted-values", row_index, plan.seed)


FORMATS = (
    "list",
    "text",
    "list-values",
    "list-permuted-names",
    "list-permuted-values",
    "list-short",
)


def serialize_dataset(ds, fmt, seed=None, max_features=10):
    """Serialize every row of ``ds`` with one of the template formats."""
    cols = ds.columns
    if fmt == "list":
        return [list_template(cols, r, i) for i, r in enumerate(ds.rows)]
    if fmt == "text":
        return [text_template(cols, r, i) for i, r in enumerate(ds.rows)]
    if fmt == "list-values":
        return [list_only_values(cols, r, i) for i, r in enumerate(ds.rows)]
    if fmt == "list-short":
        return [list_short(cols, r, max_features, i) for i, r in enumerate(ds.rows)]
    if fmt in ("list-permuted-names", "list-permuted-values"):
        seed = 0 if seed is None else seed
        if fmt == "list-permuted-names":
            plan = build_permutation_plan(ds, "names", seed)
            return [list_permuted_names(cols, r, plan, i) for i, r in enumerate(ds.rows)]
        plan = build_permutation_plan(ds, "values", seed)
        return [list_permuted_values(cols, r, plan, i) for i, r in enumerate(ds.rows)]
    raise DataError(f"unknown serialization format {fmt!r}")


__all__ = [
    "SerializedExample",
    "PermutationPlan",
    "list_template",
    "text_template",
    "list_only_values",
    "list_short",
    "list_permuted_names",
    "list_permuted_values",
    "build_permutation_plan",
    "permute_value",
    "bin_index",
    "uniform_bin_edges",
    "serialize_dataset",
    "format_number",
    "FORMATS",
]
