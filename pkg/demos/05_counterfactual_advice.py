"""In-season advice: minimal feasible changes that flip a risk prediction.

Given a field the classifier flags as at-risk, the advisor searches the
model's own bin grid for the smallest actionable perturbations (by default
only spraying and irrigation-adjacent soil water may move) that push the
prediction below threshold, and returns a small diverse set of options.
"""

import numpy as np

from ipmcausal import counterfactual as cfx
from ipmcausal import datamodel as dm
from ipmcausal import ebm
from ipmcausal import scm

spec = scm.default_spec(seed=31)
table = dm.make_supervised(scm.simulate(spec, 400, 26, 4), presence_threshold=10)
frame = table.frame
train = frame[frame["trap_id"] < "t00300"]
hold = frame[frame["trap_id"] >= "t00300"]

model = ebm.fit_ebm(train, table.ebm_cols, "presence",
                    categorical=table.categorical_cols,
                    config=ebm.EbmConfig(rounds=300, lr=0.05, bag_count=8, max_bins=16, seed=2))
scales = cfx.compute_scales(train, [c for c in table.ebm_cols
                                    if c not in table.categorical_cols])
constraints = cfx.default_pest_constraints()
print("actionable in-season:", sorted(set(model.feature_order) - constraints.immutable))

probs = ebm.predict_proba_frame(model, hold)
order = np.argsort(np.abs(probs - 0.62))
shown = 0
for i in order:
    if probs[i] < 0.5:
        continue
    row = hold.iloc[int(i)]
    x = {k: (row[k] if isinstance(row[k], str) else float(row[k]))
         for k in model.feature_order}
    result = cfx.generate_counterfactuals(model, x, k=3, constraints=constraints,
                                          scales=scales,
                                          config=cfx.CfConfig(restarts=64, seed=0))
    if not result.items:
        continue
    print(f"\nfield at week {row['week']:.0f}, count {row['Y']:.0f}, "
          f"risk {probs[i]:.2f} -> advice:")
    for j, item in enumerate(result.items, 1):
        changes = ", ".join(f"{n}: {x[n]} -> {item.x_cf[n]}" for n in item.changed)
        print(f"  option {j}: {changes}")
        print(f"            risk after {item.probability:.2f}, "
              f"effort {item.proximity:.2f}, "
              f"re-validated {cfx.validate_counterfactual(model, x, item)}")
    print(f"  diversity {result.diversity:.3f}, "
          f"best effort only: {result.best_effort}")
    shown += 1
    if shown >= 3:
        break

print("\nwhat-if exploration: allowing weather moves (forecast-conditioned, "
      "not real advice)")
open_constraints = cfx.ActionabilityConstraints(
    immutable=frozenset(cfx.PEST_IMMUTABLE_DEFAULTS),  # weather left free
)
row = hold.iloc[int(order[0])]
x = {k: (row[k] if isinstance(row[k], str) else float(row[k]))
     for k in model.feature_order}
if ebm.predict_proba(model, x) >= 0.5:
    result = cfx.generate_counterfactuals(model, x, k=3, constraints=open_constraints,
                                          scales=scales,
                                          config=cfx.CfConfig(restarts=64, seed=0))
    for item in result.items:
        print(f"  would flip with: {dict((n, item.x_cf[n]) for n in item.changed)}")
