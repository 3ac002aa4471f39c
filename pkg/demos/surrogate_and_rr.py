"""Explain a black-box scorer with a logistic surrogate, then compute a relative risk."""

import numpy as np

from tabser.dataset import NUMERIC, ColumnSpec, dataset_from_records
from tabser.introspect import relative_risk, surrogate_importance

rng = np.random.default_rng(0)
X = rng.normal(size=(200, 4))
columns = [ColumnSpec(f"x{j}", f"feature {j}", NUMERIC) for j in range(4)]
ds = dataset_from_records(columns, X.tolist(), [0] * len(X), ["unused"])

# pretend the model only looks at x2
probs = 1 / (1 + np.exp(-3 * X[:, 2]))
result = surrogate_importance(ds, probs)
print(f"chosen C = {result.C}")
for name, weight, rank in result.ranked():
    print(f"  {rank}. {name}: {weight:+.3f}")

# 30 of 100 exposed patients had the outcome, against 10 of 100 unexposed
rr = relative_risk(30, 70, 10, 90)
print(f"RR = {rr.rr:.2f}  95% CI [{rr.ci_low:.2f}, {rr.ci_high:.2f}]")
