"""Serializations that ask a text-generation backend to write the prose.

Each row is split into units (a single column, a pair of columns, or the
whole row), one backend call is made per unit, and the generations are
joined with single spaces in input order. Calls for one row can run in
parallel; if any call fails the whole row fails with the unit's index.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from tabser.dataset import format_value
from tabser.errors import ArityMismatch, BackendError, DataError
from tabser.serialize import SerializedExample, list_template

T0_INSTRUCTION = "Write this information as a sentence: "
REWRITE_INSTRUCTION = "Rewrite all list items in the input as a natural text."
DEFAULT_SUBJECTS = ("person", "car", "patient")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    guide_prefix: Optional[str] = None
    max_tokens: int = 128
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise DataError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise DataError("temperature must be >= 0")


def _pair(col, v):
    return f"{col.display_name}: {format_value(v)}"


def _run(requests, backend, max_workers):
    def call(i, req):
        try:
            out = backend.generate(req.prompt, max_tokens=req.max_tokens, temperature=req.temperature)
        except BackendError as e:
            raise BackendError(f"generation failed: {e}", index=i) from e
        return out or ""

    if max_workers <= 1 or len(requests) <= 1:
        return [call(i, r) for i, r in enumerate(requests)]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(call, i, r) for i, r in enumerate(requests)]
        # result() re-raises in unit order, so the lowest failing index wins
        return [f.result() for f in futures]


def _join(parts):
    return " ".join(p.strip() for p in parts if p and p.strip())


def table_to_text(cols, row, backend, max_tokens=128, temperature=0.0, max_workers=1, row_index=0):
    """One call per ``name: value`` pair; generations concatenated in column order."""
    if len(cols) != len(row):
        raise ArityMismatch(f"{len(cols)} columns but {len(row)} values")
    reqs = [GenerationRequest(_pair(c, v), None, max_tokens, temperature) for c, v in zip(cols, row)]
    outs = _run(reqs, backend, max_workers)
    return SerializedExample(_join(outs), "table2text", row_index)


def text_t0_pairs(cols, row, backend, max_tokens=128, temperature=0.0, max_workers=1, row_index=0):
    """Columns grouped two at a time, each group sent with the T0 instruction."""
    if len(cols) != len(row):
        raise ArityMismatch(f"{len(cols)} columns but {len(row)} values")
    pairs = [_pair(c, v) for c, v in zip(cols, row)]
    groups = [", ".join(pairs[i : i + 2]) for i in range(0, len(pairs), 2)]
    reqs = [GenerationRequest(T0_INSTRUCTION + g, None, max_tokens, temperature) for g in groups]
    outs = _run(reqs, backend, max_workers)
    return SerializedExample(_join(outs), "text-pairs", row_index)


def text_gpt3_full(
    cols,
    row,
    backend,
    subject="person",
    subjects=DEFAULT_SUBJECTS,
    max_tokens=128,
    temperature=0.0,
    row_index=0,
):
    """Whole list serialization in one call, output steered by ``The {subject} is``."""
    if subject not in subjects:
        raise DataError(f"subject {subject!r} not in {tuple(subjects)}")
    guide = f"The {subject} is"
    listing = list_template(cols, row).text
    prompt = f"{REWRITE_INSTRUCTION}\n\n{listing}\n\n{guide}"
    req = GenerationRequest(prompt, guide, max_tokens, temperature)
    (out,) = _run([req], backend, 1)
    if out and not out[0].isspace():
        out = " " + out
    return SerializedExample(guide + out.rstrip(), "text-full", row_index)


def value_coverage(row, text):
    """Fraction of non-missing values whose text appears verbatim in ``text``."""
    values = [format_value(v) for v in row if v is not None]
    if not values:
        return 1.0
    return sum(1 for v in values if v in text) / len(values)


LLM_FORMATS = ("table2text", "text-pairs", "text-full")


def serialize_dataset_llm(ds, fmt, backend, subject="person", max_workers=1, **params):
    fn = {"table2text": table_to_text, "text-pairs": text_t0_pairs}.get(fmt)
    out = []
    for i, row in enumerate(ds.rows):
        try:
            if fmt == "text-full":
                out.append(text_gpt3_full(ds.columns, row, backend, subject=subject, row_index=i, **params))
            elif fn is not None:
                out.append(fn(ds.columns, row, backend, max_workers=max_workers, row_index=i, **params))
            else:
                raise DataError(f"unknown model-assisted format {fmt!r}")
        except BackendError as e:
            raise BackendError(f"row {i}: {e}") from e
    return out
