"""Do-interventions and twin-world counterfactuals on the ecosystem model.

Because the simulator stores its raw noise draws per trap, any intervention
can be replayed against the exact same season: same weather shocks, same
scouting luck, different action.  That is the oracle every estimator in this
package is judged against.
"""

import numpy as np

from ipmcausal import scm

spec = scm.default_spec(seed=11, spray_policy=False)

# season-long spraying versus no spraying, paired by noise
always = scm.intervene(spec, [scm.Intervention("Sp", 1.0)])
never = scm.intervene(spec, [scm.Intervention("Sp", 0.0)])
y_on = scm.simulate(always, 500, 26, 4).to_frame().groupby("trap_id")["pest_count"].mean()
y_off = scm.simulate(never, 500, 26, 4).to_frame().groupby("trap_id")["pest_count"].mean()
print(f"do(spray all season): mean count {y_on.mean():.1f} "
      f"vs never spraying {y_off.mean():.1f} (paired over 500 traps)")

# bt variety suppresses the late-season generations
bt = scm.simulate(scm.intervene(spec, [scm.Intervention("V", "bt")]), 500, 26, 2).to_frame()
conv = scm.simulate(scm.intervene(spec, [scm.Intervention("V", "conv")]), 500, 26, 2).to_frame()
late = lambda f: f[f.week >= 14].groupby("trap_id")["pest_count"].max().mean()
print(f"late-season peak: bt {late(bt):.1f} vs conventional {late(conv):.1f}")

# twin worlds: a heavy-rain week, everything else identical
_, traces = scm.simulate_traced(spec, 1000, 26, 2)
lower = 0
drops = []
for trace in traces.values():
    twin = scm.twin_counterfactual(spec, trace, scm.Intervention("Pr", 40.0), week=10)
    f, c = twin.factual[10].pest_count, twin.counterfactual[10].pest_count
    lower += c < f
    drops.append(f - c)
print(f"\ndo(Pr=40mm) at week 10: next-week count strictly lower in "
      f"{lower/len(traces):.0%} of 1000 twins, mean drop {np.mean(drops):.1f} moths")

# exact per-cell spray effects on a baseline-count grid
grid = scm.ground_truth_cate(spec, "Sp", {"Y": [3, 8, 15, 30]}, n_mc=400)
print("\nexact one-step spray effect by current count (twin Monte Carlo):")
labels = ["Y<=3", "3<Y<=8", "8<Y<=15", "15<Y<=30", "Y>30"]
for (cell,), label in zip(sorted(grid.cells), labels):
    eff = grid.cells[(cell,)]
    print(f"  {label:10s} effect {eff.effect:+7.2f} +- {eff.se:.2f}  (n={eff.n})")
print("the effect scales with the standing population: spraying a hot field "
      "saves far more moths than spraying a quiet one")
