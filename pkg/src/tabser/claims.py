"""Serialization of healthcare-claims histories under a token budget.

A record is a patient's age, sex and race plus a dated list of visits, each
holding condition and procedure concepts. Because a full history rarely fits
the scoring model's input, concepts are ranked per patient by a selection
strategy and admitted greedily while the serialized text stays within the
budget. A concept is attached to one visit; the visit header is written once,
with the first admitted concept of that visit.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from tabser.errors import DataError, UnknownSex
from tabser.serialize import SerializedExample

CONDITION = "condition"
PROCEDURE = "procedure"
OUTPATIENT = "outpatient"
INPATIENT = "inpatient"

ORDERS = ("least_frequent", "most_frequent", "oldest", "most_recent")
SCOPES = ("conditions", "procedures", "both")
STYLES = ("list", "text", "list_short")

TOKEN_LIMIT = 1024
WORDS_PER_LIMIT = 400
LIST_SHORT_CONCEPTS = 10

MONTHS = (
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November", "December",
)


@dataclass(frozen=True)
class Concept:
    id: str
    name: str
    kind: str = CONDITION
    frequency: int = 1

    def __post_init__(self):
        if self.kind not in (CONDITION, PROCEDURE):
            raise DataError(f"unknown concept kind {self.kind!r}")
        if self.frequency < 1:
            raise DataError(f"concept {self.id!r}: frequency must be >= 1")


@dataclass(frozen=True)
class Visit:
    date: dt.date
    kind: str
    primary_complaint: str
    conditions: tuple = ()
    procedures: tuple = ()
    specialty: Optional[str] = None
    stay_days: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        object.__setattr__(self, "procedures", tuple(self.procedures))
        if self.kind == OUTPATIENT and not self.specialty:
            raise DataError("outpatient visit without specialty")
        if self.kind == INPATIENT and (self.stay_days is None or self.stay_days < 1):
            raise DataError("inpatient visit without a stay of at least one day")
        if self.kind not in (OUTPATIENT, INPATIENT):
            raise DataError(f"unknown visit kind {self.kind!r}")


@dataclass(frozen=True)
class ClaimsRecord:
    age: int
    sex: str
    race: str
    visits: tuple = ()
    patient_id: Optional[str] = None

    def __post_init__(self):
        if self.age < 0:
            raise DataError("age must be >= 0")
        # stable sort keeps same-day visits in input order
        object.__setattr__(self, "visits", tuple(sorted(self.visits, key=lambda v: v.date)))


@dataclass(frozen=True)
class SelectionStrategy:
    order: str = "most_frequent"
    scope: str = "conditions"

    def __post_init__(self):
        if self.order not in ORDERS:
            raise DataError(f"unknown order {self.order!r}")
        if self.scope not in SCOPES:
            raise DataError(f"unknown scope {self.scope!r}")


class ConceptEntry(NamedTuple):
    """A selected concept placed on one visit (index into ``record.visits``)."""

    visit: int
    concept: Concept


def estimate_tokens(text: str) -> int:
    """Token estimate from word count: 400 words ~ 1024 tokens, rounded up."""
    words = len(text.split())
    return -(-words * TOKEN_LIMIT // WORDS_PER_LIMIT)


def format_date(d: dt.date) -> str:
    return f"{MONTHS[d.month - 1]} {d.day}, {d.year}"


_SEX_WORDS = {"male": ("man", "He"), "female": ("woman", "She")}


def _sex_words(sex):
    try:
        return _SEX_WORDS[sex.strip().lower()]
    except KeyError:
        raise UnknownSex(f"no wording for sex {sex!r}") from None


def _join_names(names):
    if len(names) <= 1:
        return "".join(names)
    if len(names) == 2:
        return f"{names[0]} and {names[1]}"
    return ", ".join(names[:-1]) + f", and {names[-1]}"


def summary_sentence(rec):
    noun, _ = _sex_words(rec.sex)
    race = rec.race.replace("_", " ")
    return f"Summary: The patient is a {rec.age} year old {race} {noun}."


def _visit_entries(rec, selected):
    by_visit = defaultdict(list)
    for entry in selected:
        by_visit[entry.visit].append(entry.concept)
    out = []
    for v in sorted(by_visit):
        visit = rec.visits[v]
        chosen = by_visit[v]
        chosen_keys = {(c.kind, c.id) for c in chosen}

        def in_visit_order(concepts):
            return [c for c in concepts if (c.kind, c.id) in chosen_keys]

        conds = in_visit_order(visit.conditions)
        procs = in_visit_order(visit.procedures)
        placed = {(c.kind, c.id) for c in conds + procs}
        for c in chosen:
            if (c.kind, c.id) not in placed:
                (conds if c.kind == CONDITION else procs).append(c)
                placed.add((c.kind, c.id))
        # names come from the selection so renamed concepts are honoured
        names = {(c.kind, c.id): c.name for c in chosen}
        conds = [names[(c.kind, c.id)] for c in conds]
        procs = [names[(c.kind, c.id)] for c in procs]
        out.append((visit, conds, procs))
    return out


def _list_visit(visit, conds, procs):
    if visit.kind == OUTPATIENT:
        header = f"{format_date(visit.date)}: saw a doctor for {visit.specialty}"
    else:
        header = f"{format_date(visit.date)}: visited the hospital for {_days(visit.stay_days)}"
    lines = [header]
    if conds:
        lines.append("Conditions:")
        lines.extend(f"- {n}" for n in conds)
    if procs:
        lines.append("Procedures:")
        lines.extend(f"- {n}" for n in procs)
    return "\n".join(lines)


def _days(n):
    return "1 day" if n == 1 else f"{n} days"


def _text_visit(visit, conds, procs, pronoun):
    when = format_date(visit.date)
    if visit.kind == OUTPATIENT:
        s = f"On {when} the patient saw a doctor for {visit.specialty}"
    else:
        s = f"On {when} the patient visited the hospital for {_days(visit.stay_days)}"
    s += f" with a primary complaint of {visit.primary_complaint}."
    others = [n for n in conds if n != visit.primary_complaint]
    if others:
        s += f" {pronoun} was also treated for {_join_names(others)}."
    if procs:
        s += f" {pronoun} also underwent {_join_names(procs)}."
    return s


def serialize_claims(rec: ClaimsRecord, selected, style="list") -> SerializedExample:
    """Render a record with the selected concepts.

    ``selected`` is a list of :class:`ConceptEntry`. Only visits carrying at
    least one selected concept are written, in date order; inside a visit,
    concepts keep the order in which the visit lists them.
    """
    if style not in STYLES:
        raise DataError(f"unknown claims style {style!r}")
    selected = list(selected)
    if style == "list_short":
        selected = selected[:LIST_SHORT_CONCEPTS]
    _, pronoun = _sex_words(rec.sex)
    blocks = [summary_sentence(rec)]
    for visit, conds, procs in _visit_entries(rec, selected):
        if style == "text":
            blocks.append(_text_visit(visit, conds, procs, pronoun))
        else:
            blocks.append(_list_visit(visit, conds, procs))
    return SerializedExample("\n\n".join(blocks), f"claims-{style}", 0)


def _occurrences(rec, scope):
    kinds = {"conditions": (CONDITION,), "procedures": (PROCEDURE,), "both": (CONDITION, PROCEDURE)}[scope]
    occ = defaultdict(list)
    first = {}
    for v, visit in enumerate(rec.visits):
        for c in visit.conditions + visit.procedures:
            if c.kind not in kinds:
                continue
            key = (c.kind, c.id)
            occ[key].append(v)
            first.setdefault(key, c)
    return occ, first


def rank_concepts(rec: ClaimsRecord, strat: SelectionStrategy):
    """All in-scope concepts of ``rec`` in admission order, each placed on one visit.

    Frequency orders break ties by earlier first occurrence, then id, and
    attach the concept to its earliest visit. ``oldest`` ranks by first
    occurrence (earliest visit); ``most_recent`` by last occurrence, newest
    first, attached to that latest visit.
    """
    occ, first = _occurrences(rec, strat.scope)
    entries = []
    for key, visits in occ.items():
        c = first[key]
        freq = len(visits)
        concept = Concept(c.id, c.name, c.kind, freq)
        first_date = rec.visits[visits[0]].date.toordinal()
        last_date = rec.visits[visits[-1]].date.toordinal()
        if strat.order == "most_frequent":
            sort_key = (-freq, first_date, c.id, c.kind)
            v = visits[0]
        elif strat.order == "least_frequent":
            sort_key = (freq, first_date, c.id, c.kind)
            v = visits[0]
        elif strat.order == "oldest":
            sort_key = (first_date, c.id, c.kind)
            v = visits[0]
        else:
            sort_key = (-last_date, c.id, c.kind)
            v = visits[-1]
        entries.append((sort_key, ConceptEntry(v, concept)))
    entries.sort(key=lambda t: t[0])
    return [e for _, e in entries]


def full_entries(rec: ClaimsRecord, scope="both"):
    """Every in-scope concept occurrence, visit by visit: the unabridged record."""
    kinds = {"conditions": (CONDITION,), "procedures": (PROCEDURE,), "both": (CONDITION, PROCEDURE)}[scope]
    return [
        ConceptEntry(v, c)
        for v, visit in enumerate(rec.visits)
        for c in visit.conditions + visit.procedures
        if c.kind in kinds
    ]


def select_concepts(
    rec: ClaimsRecord,
    strat: SelectionStrategy,
    budget: int,
    style="list",
    estimator=estimate_tokens,
    max_concepts=None,
):
    """Greedy admission of ranked concepts while the serialization fits ``budget``.

    Admission stops at the first concept that would push the estimated
    token count of the rendered record past the budget, so the result is
    always a prefix of :func:`rank_concepts`. ``list_short`` caps the result
    at ten concepts.
    """
    if budget <= 0:
        raise DataError("budget must be positive")
    if style == "list_short":
        max_concepts = LIST_SHORT_CONCEPTS if max_concepts is None else min(max_concepts, LIST_SHORT_CONCEPTS)
    ranked = rank_concepts(rec, strat)
    admitted = []
    for entry in ranked:
        if max_concepts is not None and len(admitted) >= max_concepts:
            break
        trial = admitted + [entry]
        if estimator(serialize_claims(rec, trial, style).text) > budget:
            break
        admitted = trial
    return admitted


def apply_concept_map(concepts, mapping):
    """Rename concepts by id; unmapped ones keep their name. Works on entries too."""
    out = []
    for item in concepts:
        if isinstance(item, ConceptEntry):
            c = item.concept
            renamed = Concept(c.id, mapping.get(c.id, c.name), c.kind, c.frequency)
            out.append(ConceptEntry(item.visit, renamed))
        else:
            out.append(Concept(item.id, mapping.get(item.id, item.name), item.kind, item.frequency))
    return out


def rename_record(rec: ClaimsRecord, mapping):
    """Apply a concept map to every visit, including primary complaints that name a mapped concept."""

    def upd(cs):
        return tuple(Concept(c.id, mapping.get(c.id, c.name), c.kind, c.frequency) for c in cs)

    visits = []
    for v in rec.visits:
        by_name = {c.name: mapping[c.id] for c in v.conditions + v.procedures if c.id in mapping}
        complaint = by_name.get(v.primary_complaint, v.primary_complaint)
        visits.append(Visit(v.date, v.kind, complaint, upd(v.conditions), upd(v.procedures), v.specialty, v.stay_days))
    return ClaimsRecord(rec.age, rec.sex, rec.race, visits, rec.patient_id)


def template_budget(template_body, limit=TOKEN_LIMIT, estimator=estimate_tokens):
    """Default budget: the token limit minus the cost of the task template itself."""
    from tabser.prompt import PLACEHOLDER

    return limit - estimator(template_body.replace(PLACEHOLDER, ""))


def _concepts(items, kind, visit_no):
    out = []
    for c in items or []:
        if "id" not in c or "name" not in c:
            raise DataError(f"visit {visit_no}: concept needs id and name")
        out.append(Concept(str(c["id"]), c["name"], kind, 1))
    return out


def record_from_dict(d):
    visits = []
    for i, v in enumerate(d.get("visits") or []):
        try:
            date = dt.date.fromisoformat(v["date"])
        except (KeyError, ValueError) as e:
            raise DataError(f"visit {i}: bad date ({e})") from None
        visits.append(
            Visit(
                date=date,
                kind=v.get("kind", OUTPATIENT),
                primary_complaint=v.get("primary_complaint", ""),
                conditions=_concepts(v.get("conditions"), CONDITION, i),
                procedures=_concepts(v.get("procedures"), PROCEDURE, i),
                specialty=v.get("specialty"),
                stay_days=v.get("stay_days"),
            )
        )
    rec = ClaimsRecord(
        age=int(d["age"]), sex=d["sex"], race=d["race"], visits=visits, patient_id=d.get("patient_id")
    )
    return with_frequencies(rec)


def with_frequencies(rec):
    """Set each concept's frequency to the number of visits it occurs in."""
    counts = defaultdict(int)
    for visit in rec.visits:
        for c in set((c.kind, c.id) for c in visit.conditions + visit.procedures):
            counts[c] += 1

    def upd(cs):
        return tuple(Concept(c.id, c.name, c.kind, counts[(c.kind, c.id)]) for c in cs)

    visits = [
        Visit(v.date, v.kind, v.primary_complaint, upd(v.conditions), upd(v.procedures), v.specialty, v.stay_days)
        for v in rec.visits
    ]
    return ClaimsRecord(rec.age, rec.sex, rec.race, visits, rec.patient_id)


def load_claims(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(record_from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as e:
                raise DataError(f"{path}:{line_no}: {e}") from e
    return records


def load_concept_map(path):
    """Two-column TSV ``id<TAB>alternative_name``; a ``-`` name means no mapping."""
    mapping = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if len(row) < 2 or not row[0].strip():
                continue
            name = row[1].strip()
            if name and name not in ("-", "---"):
                mapping[row[0].strip()] = name
    return mapping
