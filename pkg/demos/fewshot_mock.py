"""Few-shot evaluation against an offline mock scorer.

The mock reads the rendered prompt and adds a fixed score to the "Yes"
answer whenever the word "elevated" appears in it, so it separates the
two classes of the toy table perfectly.  Shot sets are drawn and stored
on each report for an outside fine-tuning step; the prompt itself only
holds the test row.  Swap in ``HttpBackend`` to talk to a real
completion endpoint.
"""

import json
from pathlib import Path

from tabser.backend import LinearScorerBackend
from tabser.dataset import load_csv, load_metadata
from tabser.evaluate import run_experiment
from tabser.prompt import builtin_template

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

meta = json.loads((FIXTURES / "toy.meta.json").read_text())
columns, classes = load_metadata(meta)
ds = load_csv(FIXTURES / "toy.csv", columns, meta["label_column"], class_names=classes)
template = builtin_template("income")

for name, backend in [
    ("planted", LinearScorerBackend({"elevated": [0.0, 4.0]})),
    ("uninformed", LinearScorerBackend({})),
]:
    for report in run_experiment(ds, template, "text", backend, shots_grid=[0, 4, 8], seeds=range(5)):
        print(f"{name:10s} k={report.k:<2d} AUC {report.mean:.3f} +/- {report.sd:.3f}")
