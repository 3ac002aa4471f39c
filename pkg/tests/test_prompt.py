import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import golden_row
from tabser.backend import EchoBackend, LinearScorerBackend
from tabser.errors import DuplicateChoices, EmptyChoices, MissingPlaceholder, NonFiniteScore, TemplateError
from tabser.prompt import (
    BUILTIN_TEMPLATES,
    TaskTemplate,
    builtin_template,
    builtin_template_source,
    classify,
    normalize_scores,
    parse_template,
    render,
)
from tabser.serialize import SerializedExample, text_template

INCOME_Q = "Does this person earn more than 50000 dollars per year? Yes or no?"


class FixedScores:
    def __init__(self, scores):
        self.scores = list(scores)

    def score_choices(self, prompt, choices):
        return self.scores[: len(choices)]


def test_income_template():
    tpl = builtin_template("income")
    assert tpl.answer_choices == ("No", "Yes")
    assert tpl.body.endswith(INCOME_Q + "\nAnswer: ")
    assert tpl.body.startswith("{{serialization}}\n\n")
    assert tpl.target == "{{ answer_choices[label] }}"


def test_car_template():
    assert builtin_template("car").answer_choices == ("Unacceptable", "Acceptable", "Good", "Very good")


@pytest.mark.parametrize("name", BUILTIN_TEMPLATES)
def test_builtin_round_trip(name):
    src = builtin_template_source(name)
    tpl = parse_template(src)
    assert tpl.to_source() == src
    assert parse_template(tpl.to_source()) == tpl


def test_parse_errors():
    with pytest.raises(MissingPlaceholder):
        parse_template("answer_choices: 'No ||| Yes'\njinja: 'no slot here'\n")
    with pytest.raises(EmptyChoices):
        parse_template("answer_choices: 'No ||| '\njinja: '{{serialization}}'\n")
    with pytest.raises(EmptyChoices):
        parse_template("jinja: '{{serialization}}'\n")
    with pytest.raises(DuplicateChoices):
        parse_template("answer_choices: 'Yes ||| Yes'\njinja: '{{serialization}}'\n")
    with pytest.raises(TemplateError):
        parse_template("answer_choices: 'No ||| Yes'\njinja: '{{serialization}} {{serialization}}'\n")
    with pytest.raises(TemplateError):
        parse_template("answer_choices: 'No ||| Yes'\njinja: '{{serialization}}\n")


def test_quoted_apostrophe_round_trip():
    tpl = TaskTemplate("{{serialization}}\nIs it the patient's? ", ("No", "Yes"))
    assert parse_template(tpl.to_source()).body == tpl.body


def test_render_substitution():
    tpl = TaskTemplate("{{serialization}}\n\nQ?", ("No", "Yes"), target=None)
    assert render(tpl, SerializedExample("The x is 1.", "text")).text == "The x is 1.\n\nQ?"
    assert render(tpl, "{{serialization}}").text == "{{serialization}}\n\nQ?"


def test_render_income_prompt():
    cols, row, expected = golden_row("income", "text")
    prompt = render(builtin_template("income"), text_template(cols, row))
    assert prompt.text == expected + "\n\n" + INCOME_Q + "\nAnswer: "
    assert prompt.choices == ("No", "Yes")


@given(st.text(max_size=30), st.text(max_size=30))
def test_render_injective(a, b):
    tpl = builtin_template("heart")
    if a != b:
        assert render(tpl, a).text != render(tpl, b).text


def test_classify_examples():
    tpl = TaskTemplate("{{serialization}}", ("No", "Yes"))
    s = classify(render(tpl, "x"), FixedScores([math.log(0.6), math.log(0.2)]))
    assert s.probs == pytest.approx([0.75, 0.25], abs=1e-12)
    assert s.predicted == 0
    tpl4 = builtin_template("car")
    s = classify(render(tpl4, "x"), EchoBackend())
    assert s.probs == pytest.approx([0.25] * 4, abs=1e-15)
    assert s.predicted == 0


def test_choice_prefix_is_a_space():
    seen = []

    class Spy:
        def score_choices(self, prompt, choices):
            seen.append((prompt, list(choices)))
            return [0.0] * len(choices)

    classify(render(builtin_template("income"), "row"), Spy())
    assert seen[0][1] == [" No", " Yes"]
    assert seen[0][0].endswith("Answer: ")


def test_linear_scorer_toward_class_one():
    backend = LinearScorerBackend({"is 69": [0.0, 1.0]})
    tpl = TaskTemplate("{{serialization}}", ("No", "Yes"))
    scores = backend.score_choices(render(tpl, "The age is 69.").text, [" No", " Yes"])
    assert scores[1] - scores[0] == 1.0


def test_non_finite_scores():
    tpl = TaskTemplate("{{serialization}}", ("No", "Yes"))
    for bad in ([math.nan, 0.0], [-math.inf, 0.0], [0.0]):
        with pytest.raises(NonFiniteScore):
            classify(render(tpl, "x"), FixedScores(bad))


@given(
    st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=6),
    st.floats(-100, 100, allow_nan=False),
)
def test_softmax_shift_invariance(lp, c):
    p, k = normalize_scores(lp)
    q, k2 = normalize_scores([x + c for x in lp])
    assert abs(p.sum() - 1) <= 1e-12
    assert np.allclose(p, q, rtol=0, atol=1e-12)
    # the argmax may only move between values tied after rounding
    assert k == k2 or math.isclose(lp[k], lp[k2], abs_tol=1e-12 + 1e-15 * abs(c))
