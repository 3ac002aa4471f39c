"""Turn table rows into text and classify them with a language model."""

__version__ = "0.1.0"

from tabser.dataset import ColumnSpec, Dataset, load_csv, load_metadata
from tabser.errors import BackendError, DataError, NonConvergence, TabserError, TemplateError
from tabser.evaluate import EvalReport, auc_binary, auc_macro_ovr, run_experiment, sample_shots, split
from tabser.prompt import TaskTemplate, builtin_template, classify, load_template, parse_template, render
from tabser.serialize import SerializedExample, list_template, serialize_dataset, text_template

__all__ = [
    "BackendError",
    "ColumnSpec",
    "DataError",
    "Dataset",
    "EvalReport",
    "NonConvergence",
    "SerializedExample",
    "TabserError",
    "TaskTemplate",
    "TemplateError",
    "auc_binary",
    "auc_macro_ovr",
    "builtin_template",
    "classify",
    "list_template",
    "load_csv",
    "load_metadata",
    "load_template",
    "parse_template",
    "render",
    "run_experiment",
    "sample_shots",
    "serialize_dataset",
    "split",
    "text_template",
]
