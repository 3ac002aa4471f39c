"""Render the toy table in each hand-written format and print the first row.

Run from the repository root:  python3 demos/serialize_rows.py
"""

import json
from pathlib import Path

from tabser.dataset import load_csv, load_metadata
from tabser.serialize import FORMATS, serialize_dataset

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

meta = json.loads((FIXTURES / "toy.meta.json").read_text())
columns, classes = load_metadata(meta)
ds = load_csv(FIXTURES / "toy.csv", columns, meta["label_column"], class_names=classes)

for fmt in FORMATS:
    # the permuted formats need a seed so that the same mapping is reused for every row
    examples = serialize_dataset(ds, fmt, seed=0)
    print(f"== {fmt}")
    print(examples[0].text)
    print()
