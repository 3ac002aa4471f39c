"""Task templates, rendering, and verbalizer-based classification.

A template file has two keys::

    answer_choices: 'No ||| Yes'
    jinja: '{{serialization}}

    Does this person earn more than 50000 dollars per year? Yes or no?
    Answer:
    |||
    {{ answer_choices[label] }}'

Only this subset is understood: one ``{{serialization}}`` slot and an
optional training-target clause after ``|||``, which is dropped from the
inference body. Choice ``i`` verbalizes class ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from tabser.errors import (
    DuplicateChoices,
    EmptyChoices,
    MissingPlaceholder,
    NonFiniteScore,
    TemplateError,
)

PLACEHOLDER = "{{serialization}}"
CHOICE_SEP = "|||"
DEFAULT_TARGET = "{{ answer_choices[label] }}"

BUILTIN_TEMPLATES = (
    "bank",
    "blood",
    "california",
    "car",
    "creditg",
    "diabetes",
    "heart",
    "income",
    "jungle",
    "eol",
    "surgery",
    "loh",
)


@dataclass(frozen=True)
class TaskTemplate:
    body: str
    answer_choices: tuple
    target: Optional[str] = DEFAULT_TARGET
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "answer_choices", tuple(self.answer_choices))
        count = self.body.count(PLACEHOLDER)
        if count == 0:
            raise MissingPlaceholder(f"template body lacks {PLACEHOLDER}")
        if count > 1:
            raise TemplateError(f"{PLACEHOLDER} appears {count} times")
        if not self.answer_choices or any(not c for c in self.answer_choices):
            raise EmptyChoices("answer choices must be non-empty")
        if len(set(self.answer_choices)) != len(self.answer_choices):
            raise DuplicateChoices(f"duplicate answer choices {self.answer_choices}")

    def to_source(self):
        choices = f" {CHOICE_SEP} ".join(self.answer_choices)
        jinja = self.body if self.target is None else f"{self.body}\n{CHOICE_SEP}\n{self.target}"
        return f"answer_choices: {_quote(choices)}\njinja: {_quote(jinja)}\n"


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    choices: tuple


@dataclass(frozen=True)
class ClassScores:
    probs: tuple
    predicted: int
    logprobs: tuple


def _quote(s):
    return "'" + s.replace("'", "''") + "'"


def _read_scalar(text, start):
    """Read a YAML-ish scalar beginning at ``text[start]``; return (value, end)."""
    while start < len(text) and text[start] in " \t":
        start += 1
    if start < len(text) and text[start] in "'\"":
        quote = text[start]
        out, i = [], start + 1
        while i < len(text):
            ch = text[i]
            if ch == quote:
                if quote == "'" and text[i + 1 : i + 2] == "'":
                    out.append("'")
                    i += 2
                    continue
                return "".join(out), i + 1
            out.append(ch)
            i += 1
        raise TemplateError("unterminated quoted value")
    end = text.find("\n", start)
    end = len(text) if end < 0 else end
    return text[start:end].strip(), end


def _find_key(source, key):
    for pos in [0] + [i + 1 for i, ch in enumerate(source) if ch == "\n"]:
        if source.startswith(key + ":", pos):
            return pos + len(key) + 1
    return None


def parse_template(source: str, name=None) -> TaskTemplate:
    pos = _find_key(source, "answer_choices")
    if pos is None:
        raise EmptyChoices("no answer_choices line")
    raw_choices, _ = _read_scalar(source, pos)
    choices = tuple(c.strip() for c in raw_choices.split(CHOICE_SEP))
    if not raw_choices.strip() or any(not c for c in choices):
        raise EmptyChoices(f"empty answer choice in {raw_choices!r}")

    pos = _find_key(source, "jinja")
    if pos is None:
        raise MissingPlaceholder("no jinja body")
    jinja, _ = _read_scalar(source, pos)

    target = None
    cut = jinja.find(CHOICE_SEP)
    if cut >= 0:
        body, target = jinja[:cut], jinja[cut + len(CHOICE_SEP) :]
        if body.endswith("\n"):
            body = body[:-1]
        if target.startswith("\n"):
            target = target[1:]
    else:
        body = jinja
    return TaskTemplate(body=body, answer_choices=choices, target=target, name=name)


def load_template(path) -> TaskTemplate:
    with open(path, encoding="utf-8") as fh:
        return parse_template(fh.read(), name=str(path))


def builtin_template_source(name: str) -> str:
    if name not in BUILTIN_TEMPLATES:
        raise TemplateError(f"no built-in template {name!r}")
    return resources.files("tabser").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


def builtin_template(name: str) -> TaskTemplate:
    return parse_template(builtin_template_source(name), name=name)


def render(tpl: TaskTemplate, s) -> RenderedPrompt:
    """Insert the serialization text into the slot (single pass, no re-expansion)."""
    text = s if isinstance(s, str) else s.text
    head, tail = tpl.body.split(PLACEHOLDER, 1)
    return RenderedPrompt(text=head + text + tail, choices=tpl.answer_choices)


def normalize_scores(logprobs):
    """Softmax over choice log-probabilities; returns (probs, predicted)."""
    lp = np.asarray(logprobs, dtype=float)
    if lp.size == 0:
        raise EmptyChoices("no scores to normalize")
    if not np.all(np.isfinite(lp)):
        raise NonFiniteScore(f"non-finite choice score in {lp.tolist()}")
    z = np.exp(lp - lp.max())
    p = z / z.sum()
    # np.argmax returns the first maximum, i.e. the lowest class index
    return p, int(np.argmax(p))


def classify(prompt: RenderedPrompt, backend, choice_prefix=" ") -> ClassScores:
    """Score every answer choice and normalize across classes.

    Each choice is scored as ``choice_prefix + choice`` continuing the
    prompt text; multi-token choices are scored by the backend as a summed
    log-probability without length normalization.
    """
    scores = backend.score_choices(prompt.text, [choice_prefix + c for c in prompt.choices])
    if len(scores) != len(prompt.choices):
        raise NonFiniteScore(f"backend returned {len(scores)} scores for {len(prompt.choices)} choices")
    scores = [float(s) for s in scores]
    if not all(math.isfinite(s) for s in scores):
        raise NonFiniteScore(f"non-finite choice score in {scores}")
    p, predicted = normalize_scores(scores)
    return ClassScores(probs=tuple(float(x) for x in p), predicted=predicted, logprobs=tuple(scores))
