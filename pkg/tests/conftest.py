import json
from pathlib import Path

import pytest

from tabser.dataset import ColumnSpec, apply_display_maps, dataset_from_records

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = FIXTURES / "golden"
PUBLIC_DATASETS = ("bank", "blood", "california", "car", "creditg", "diabetes", "heart", "income", "jungle")


def golden_row(name, style):
    """Columns and display-mapped row for a golden fixture, plus the expected text."""
    spec = json.loads((GOLDEN / f"{name}.json").read_text(encoding="utf-8"))
    raw_cols = spec.get("list_columns", spec["columns"]) if style == "list" else spec["columns"]
    cols = [ColumnSpec.from_dict(c) for c in raw_cols]
    ds = apply_display_maps(dataset_from_records(cols, [spec["row"]], [0], ["no"]))
    expected = (GOLDEN / f"{name}.{style}.txt").read_text(encoding="utf-8")
    return ds.columns, ds.rows[0], expected


@pytest.fixture
def fixtures_dir():
    return FIXTURES


CONDITION_NAMES = [
    "chronic cholecystitis", "aplastic anemia due to drugs", "essential hypertension", "type 2 diabetes mellitus",
    "seasonal allergic rhinitis", "chronic kidney disease", "atrial fibrillation", "osteoarthritis of knee",
    "major depressive disorder", "hyperlipidemia", "asthma", "gout", "anemia", "obesity", "migraine",
    "low back pain", "pneumonia", "cellulitis", "urinary tract infection", "hypothyroidism",
]
PROCEDURE_NAMES = [
    "colonoscopy", "chest x-ray", "echocardiography", "knee arthroscopy", "blood transfusion",
    "hemodialysis", "cataract extraction", "appendectomy", "skin biopsy", "mri of brain",
]
SPECIALTIES = ["dermatology", "cardiology", "internal medicine", "family practice", "oncology", "nephrology"]


def random_claims_record(rng, max_visits=8, max_concepts=20):
    """A random ClaimsRecord drawn with a numpy Generator."""
    import datetime as dt

    from tabser.claims import CONDITION, PROCEDURE, ClaimsRecord, Concept, Visit, with_frequencies

    n_concepts = int(rng.integers(1, max_concepts + 1))
    pool = []
    for i in range(n_concepts):
        if rng.random() < 0.7:
            pool.append(Concept(f"C{i}", CONDITION_NAMES[i % len(CONDITION_NAMES)], CONDITION))
        else:
            pool.append(Concept(f"P{i}", PROCEDURE_NAMES[i % len(PROCEDURE_NAMES)], PROCEDURE))
    visits = []
    start = dt.date(2010, 1, 1).toordinal()
    for _ in range(int(rng.integers(0, max_visits + 1))):
        date = dt.date.fromordinal(start + int(rng.integers(0, 3650)))
        k = int(rng.integers(0, min(6, n_concepts) + 1))
        chosen = [pool[int(j)] for j in rng.choice(n_concepts, size=k, replace=False)]
        conds = [c for c in chosen if c.kind == CONDITION]
        procs = [c for c in chosen if c.kind == PROCEDURE]
        complaint = conds[0].name if conds else "routine examination"
        if rng.random() < 0.6:
            visits.append(Visit(date, "outpatient", complaint, conds, procs, specialty=str(rng.choice(SPECIALTIES))))
        else:
            visits.append(Visit(date, "inpatient", complaint, conds, procs, stay_days=int(rng.integers(1, 20))))
    sex = "male" if rng.random() < 0.5 else "female"
    race = str(rng.choice(["white", "black_or_african_american", "asian", "hispanic_or_latino"]))
    return with_frequencies(ClaimsRecord(int(rng.integers(18, 95)), sex, race, visits))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
