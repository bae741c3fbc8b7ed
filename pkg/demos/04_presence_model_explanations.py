"""Train the interpretable presence classifier and read its explanations.

The model is additive over binned features: every prediction is the intercept
plus exactly one score per feature, so local explanations are not
approximations; they ARE the prediction.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ipmcausal import datamodel as dm
from ipmcausal import ebm
from ipmcausal import scm

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

spec = scm.default_spec(seed=31)
table = dm.make_supervised(scm.simulate(spec, 400, 26, 4), presence_threshold=10)
frame = table.frame
train = frame[frame["trap_id"] < "t00300"]
hold = frame[frame["trap_id"] >= "t00300"]

config = ebm.EbmConfig(rounds=300, lr=0.05, bag_count=8, max_bins=16, seed=2)
model = ebm.fit_ebm(train, table.ebm_cols, "presence",
                    categorical=table.categorical_cols, config=config)
metrics = ebm.evaluate_classifier(model, hold, "presence")
print(f"holdout: AUC {metrics.auc:.3f}, log-loss {metrics.log_loss:.3f}, "
      f"accuracy@0.5 {metrics.accuracy:.3f}")

print("\nglobal importances (training-weighted mean |contribution|):")
report = ebm.explain_global(model)
for entry in report.features[:8]:
    print(f"  {entry['name']:8s} {entry['importance']:.3f}")

row = hold.iloc[37].to_dict()
exp = ebm.explain_local(model, row)
print(f"\none field, week {row['week']:.0f}: "
      f"p(presence next week) = {exp.probability:.3f}")
print("  contribution breakdown (sums exactly to the logit):")
ranked = sorted(exp.contributions.items(), key=lambda kv: -abs(kv[1]))
for name, c in ranked[:6]:
    print(f"    {name:8s} {c:+.3f}   (value {row[name]})")
print(f"    intercept {exp.intercept:+.3f}")
print(f"    -> logit {exp.logit:+.3f} "
      f"(check: {exp.intercept + sum(exp.contributions.values()):+.3f})")

fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
for ax, feat in zip(axes, ["Y", "LC", "T"]):
    fb = model.bin_map.features[feat]
    edges = [fb.train_min, *fb.cuts, fb.train_max]
    mids = [(a + b) / 2 for a, b in zip(edges[:-1], edges[1:])]
    ax.step(mids, model.shapes[feat], where="mid")
    ax.axhline(0, color="grey", lw=0.6)
    ax.set(title=f"shape of {feat}", xlabel=feat, ylabel="logit contribution")
fig.tight_layout()
fig.savefig(OUT / "04_shapes.png", dpi=120)
print(f"\nwrote {OUT / '04_shapes.png'}")

reliability = [c for c in metrics.calibration if c["n"] > 0]
print("\nreliability (predicted vs observed presence rate):")
for cell in reliability:
    print(f"  [{cell['p_lo']:.1f},{cell['p_hi']:.1f})  n={cell['n']:5d}  "
          f"pred {cell['mean_predicted']:.2f}  obs {cell['observed_rate']:.2f}")
