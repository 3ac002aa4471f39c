"""Serialize a claims history under shrinking token budgets."""

from pathlib import Path

from tabser.claims import SelectionStrategy, estimate_tokens, load_claims, select_concepts, serialize_claims

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "golden"

record = load_claims(GOLDEN / "eol.jsonl")[0]
strategy = SelectionStrategy("most_recent", "both")
for budget in (400, 80, 40):
    chosen = select_concepts(record, strategy, budget, style="text")
    text = serialize_claims(record, chosen, "text").text
    print(f"--- budget {budget}: {len(chosen)} concepts, ~{estimate_tokens(text)} tokens")
    print(text)
    print()
