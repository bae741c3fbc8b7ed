import numpy as np
import pandas as pd
import pytest

from ipmcausal import datamodel as dm
from ipmcausal import ebm
from ipmcausal import effects as eff
from ipmcausal import scm

from _toys import linear_cate_table


class TestFitCate:
    def test_constant_outcome_gives_null_effect(self):
        rng = np.random.default_rng(0)
        frame = pd.DataFrame({"x": rng.uniform(0, 1, 400),
                              "t": rng.integers(0, 2, 400).astype(float)})
        frame["y"] = 5.0
        for kind in ("t", "s"):
            model = eff.fit_cate(frame, "t", ["x"], learner_kind=kind, target="y")
            taus = eff.estimate_cate_frame(model, frame)
            assert np.max(np.abs(taus)) < 1e-6

    def test_linear_tau_recovered_at_midpoint(self):
        frame = linear_cate_table(seed=3, n=10_000, tau_slope=3.0)
        model = eff.fit_cate(frame, "t", ["x"], learner_kind="t", target="y")
        tau_half = eff.estimate_cate(model, {"x": 0.5})
        assert tau_half == pytest.approx(1.5, abs=0.15)

    def test_s_learner_also_recovers(self):
        frame = linear_cate_table(seed=4, n=10_000, tau_slope=3.0)
        model = eff.fit_cate(frame, "t", ["x"], learner_kind="s", target="y")
        assert eff.estimate_cate(model, {"x": 0.5}) == pytest.approx(1.5, abs=0.2)

    def test_single_arm_rejected(self):
        frame = linear_cate_table(seed=1, n=200)
        frame["t"] = 1.0
        with pytest.raises(eff.EffectsError, match="arms"):
            eff.fit_cate(frame, "t", ["x"], target="y")

    def test_learner_kind_validated(self):
        frame = linear_cate_table(seed=1, n=200)
        with pytest.raises(eff.EffectsError, match="learner"):
            eff.fit_cate(frame, "t", ["x"], learner_kind="x", target="y")

    def test_empty_covariates_rejected(self):
        frame = linear_cate_table(seed=1, n=200)
        with pytest.raises(eff.EffectsError, match="covariates"):
            eff.fit_cate(frame, "t", [], target="y")


class TestEstimateCate:
    @pytest.fixture(scope="class")
    def model(self):
        return eff.fit_cate(linear_cate_table(seed=7, n=4000), "t", ["x"], target="y")

    def test_identical_submodels_zero(self, model):
        import copy
        twin = copy.deepcopy(model)
        twin.models["mu1"] = twin.models["mu0"]
        for x in (0.1, 0.5, 0.9):
            assert eff.estimate_cate(twin, {"x": x}) == 0.0

    def test_piecewise_constant_within_bin(self, model):
        # tau is constant on the overlay of the two arm models' bin grids
        cuts = sorted(set(model.models["mu0"].bin_map.features["x"].cuts)
                      | set(model.models["mu1"].bin_map.features["x"].cuts))
        lo, hi = cuts[5], cuts[6]
        inside = np.linspace(lo + 1e-9, hi - 1e-9, 5)
        taus = {eff.estimate_cate(model, {"x": float(v)}) for v in inside}
        assert len(taus) == 1

    def test_matches_manual_subtraction(self, model):
        rng = np.random.default_rng(11)
        for _ in range(100):
            x = {"x": float(rng.uniform(0, 1))}
            manual = (ebm.predict_value(model.models["mu1"], x)
                      - ebm.predict_value(model.models["mu0"], x))
            assert eff.estimate_cate(model, x) == pytest.approx(manual, abs=1e-12)

    def test_missing_covariate_rejected(self, model):
        with pytest.raises(eff.EffectsError, match="missing"):
            eff.estimate_cate_frame(model, pd.DataFrame({"z": [1.0]}))

    def test_serialization_round_trip(self, model):
        again = eff.cate_from_json(model.to_json())
        for x in (0.2, 0.6):
            assert eff.estimate_cate(again, {"x": x}) == eff.estimate_cate(model, {"x": x})

    def test_recovers_simulator_ground_truth(self):
        spec = scm.default_spec(seed=41)
        table = dm.make_supervised(scm.simulate(spec, 1600, 26, 4))
        frame = table.frame
        covs = ["Y", "T", "LC", "PGS", "P", "SW", "Pr", "week"]
        model = eff.fit_cate(frame, "Sp", covs, learner_kind="t", target="y_next",
                             base_config=ebm.EbmConfig(rounds=400, lr=0.05, bag_count=4,
                                                       max_bins=32))
        edges = [3.0, 8.0, 15.0, 30.0]
        grid = scm.ground_truth_cate(spec, "Sp", {"Y": edges}, n_mc=800)
        taus = eff.estimate_cate_frame(model, frame)
        cell_idx = np.searchsorted(np.array(edges), frame["Y"].to_numpy(), side="right")
        errs, weights = [], []
        for cell, truth in grid.cells.items():
            mask = cell_idx == cell[0]
            if not mask.any():
                continue
            errs.append(float(taus[mask].mean()) - truth.effect)
            weights.append(mask.sum())
        rmse = np.sqrt(np.average(np.square(errs), weights=weights))
        assert rmse <= 0.15 * frame["y_next"].std()


def tiny_dataset(rows):
    """rows: (trap, zone, week, count) tuples."""
    records = []
    for trap, zone, week, count in rows:
        features = {
            "T": 24.0, "SW": 0.5, "RHa": 60.0, "Pr": 5.0, "W": 3.0, "SOI": 0.2,
            "PGS": 0.3, "S": float(week), "LC": 0.4, "P": 0.1, "SG": 2.0, "M": 0.5,
            "V": "conv", "CS": "mono", "AC": "cotton",
        }
        records.append(dm.TrapRecord(trap_id=trap, zone_id=zone, year=2023, week=week,
                                     features=features, pest_count=count, sprayed=False))
    return dm.dataset_from_records(records)


class TestBuildPanel:
    def test_two_traps_window(self):
        rows = [("a", 1, w, 10) for w in range(1, 21)]
        rows += [("b", 1, w, 9) for w in range(1, 21)]
        panel = eff.build_panel(tiny_dataset(rows), {"a": 10}, window=(4, 4))
        assert panel.units == ("a", "b")
        assert panel.periods == (-4, -3, -2, -1, 0, 1, 2, 3)
        assert panel.outcome.shape == (2, 8)
        assert panel.treated == frozenset({"a"})

    def test_missing_week_dropped_with_diagnostic(self):
        rows = [("a", 1, w, 10) for w in range(1, 21)]
        rows += [("b", 1, w, 9) for w in range(1, 21) if w != 9]
        rows += [("c", 1, w, 8) for w in range(1, 21)]
        panel = eff.build_panel(tiny_dataset(rows), {"a": 10}, window=(4, 4),
                                alignment={"b": 10, "c": 10})
        assert panel.dropped == ["b"]
        assert set(panel.units) == {"a", "c"}

    def test_no_controls_rejected(self):
        rows = [("a", 1, w, 10) for w in range(1, 21)]
        with pytest.raises(eff.EffectsError, match="control"):
            eff.build_panel(tiny_dataset(rows), {"a": 10}, window=(4, 4))

    def test_grid_matches_recomputation(self):
        rng = np.random.default_rng(5)
        rows = []
        for t in range(6):
            for w in range(1, 21):
                rows.append((f"t{t}", 1 + t % 2, w, int(rng.integers(0, 30))))
        ds = tiny_dataset(rows)
        adoption = {"t0": 9, "t3": 11}
        panel = eff.build_panel(ds, adoption, window=(3, 3), alignment={})
        raw = {(r.trap_id, r.week): r.pest_count for r in ds.records}
        for i, unit in enumerate(panel.units):
            anchor = adoption.get(unit)
            if anchor is None:
                zone = panel.zone[unit]
                anchors = [w for u, w in adoption.items() if panel.zone.get(u) == zone]
                anchor = int(round(np.mean(anchors))) if anchors else 10
            for j, p in enumerate(panel.periods):
                assert panel.outcome[i, j] == raw[(unit, anchor + p)]

    def test_wide_csv_shape(self):
        rows = [("a", 1, w, 10) for w in range(1, 21)]
        rows += [("b", 1, w, 9) for w in range(1, 21)]
        panel = eff.build_panel(tiny_dataset(rows), {"a": 10}, window=(2, 2))
        text = panel.to_wide_csv()
        lines = text.strip().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("unit,zone,treated,adoption,y_-2")


def simple_panel(treated_pre, treated_post, control_pre, control_post, n_per_arm=1,
                 periods=(-2, -1, 0, 1)):
    units, out, zone, adoption = [], [], {}, {}
    pre_len = sum(1 for p in periods if p < 0)
    post_len = len(periods) - pre_len
    for i in range(n_per_arm):
        u = f"T{i}"
        units.append(u)
        out.append([treated_pre] * pre_len + [treated_post] * post_len)
        zone[u] = 1
        adoption[u] = 10
    for i in range(n_per_arm):
        u = f"C{i}"
        units.append(u)
        out.append([control_pre] * pre_len + [control_post] * post_len)
        zone[u] = 1
    return eff.Panel(units=tuple(units), periods=tuple(periods),
                     outcome=np.array(out, dtype=float),
                     treated=frozenset(adoption), adoption_period=adoption, zone=zone)


class TestEstimateAttDid:
    def test_two_by_two_arithmetic(self):
        panel = simple_panel(10, 8, 10, 10, n_per_arm=3)
        res = eff.estimate_att_did(panel, n_boot=50, seed=0)
        assert res.att == pytest.approx(-2.0, abs=1e-12)

    def test_unit_fixed_effects_cancel(self):
        rng = np.random.default_rng(2)
        panel = simple_panel(10, 8, 10, 10, n_per_arm=4)
        shifted = eff.Panel(units=panel.units, periods=panel.periods,
                            outcome=panel.outcome + rng.normal(0, 5, (len(panel.units), 1)),
                            treated=panel.treated, adoption_period=panel.adoption_period,
                            zone=panel.zone)
        a = eff.estimate_att_did(panel, n_boot=50, seed=1)
        b = eff.estimate_att_did(shifted, n_boot=50, seed=1)
        assert b.att == pytest.approx(a.att, abs=1e-12)

    def test_period_fixed_effects_cancel(self):
        rng = np.random.default_rng(3)
        panel = simple_panel(10, 8, 10, 10, n_per_arm=4)
        shifted = eff.Panel(units=panel.units, periods=panel.periods,
                            outcome=panel.outcome + rng.normal(0, 5, (1, len(panel.periods))),
                            treated=panel.treated, adoption_period=panel.adoption_period,
                            zone=panel.zone)
        a = eff.estimate_att_did(panel, n_boot=50, seed=1)
        b = eff.estimate_att_did(shifted, n_boot=50, seed=1)
        assert b.att == pytest.approx(a.att, abs=1e-12)

    def test_bootstrap_deterministic(self):
        panel = simple_panel(12, 9, 11, 10, n_per_arm=6)
        a = eff.estimate_att_did(panel, n_boot=200, seed=9)
        b = eff.estimate_att_did(panel, n_boot=200, seed=9)
        assert (a.se, a.ci95) == (b.se, b.ci95)

    def test_zone_missing_arm_excluded(self):
        panel = simple_panel(10, 8, 10, 10, n_per_arm=2)
        zone = dict(panel.zone)
        zone["C1"] = 2  # zone 2 has a control but no treated unit
        lonely = eff.Panel(units=panel.units, periods=panel.periods, outcome=panel.outcome,
                           treated=panel.treated, adoption_period=panel.adoption_period,
                           zone=zone)
        res = eff.estimate_att_did(lonely, n_boot=50, seed=0)
        assert res.excluded_zones == [2]

    def test_ci_contains_att(self):
        spec = scm.default_spec(seed=2)
        exp = scm.simulate_adherence_experiment(spec, 300, trigger_count=40.0)
        panel = eff.build_panel(exp.triggered_dataset(), exp.adoption, window=(4, 4),
                                alignment=exp.triggers)
        res = eff.estimate_att_did(panel, n_boot=400, seed=3)
        assert res.ci95[0] <= res.att <= res.ci95[1]

    def test_null_effect_within_noise(self):
        hits = 0
        for seed in range(4):
            spec = scm.default_spec(seed=seed, spray_efficacy=0.0)
            exp = scm.simulate_adherence_experiment(spec, 400, trigger_count=40.0)
            panel = eff.build_panel(exp.triggered_dataset(), exp.adoption, window=(4, 4),
                                    alignment=exp.triggers)
            res = eff.estimate_att_did(panel, n_boot=400, seed=seed)
            hits += abs(res.att) < 2 * res.se
        assert hits >= 3

    def test_covers_twin_world_delta(self):
        spec = scm.default_spec(seed=5)
        exp = scm.simulate_adherence_experiment(spec, 600, trigger_count=40.0)
        panel = eff.build_panel(exp.triggered_dataset(), exp.adoption, window=(4, 4),
                                alignment=exp.triggers)
        res = eff.estimate_att_did(panel, n_boot=600, seed=5)
        delta = scm.adherence_true_att(spec, exp, sorted(panel.treated), post_window=4)
        assert res.ci95[0] - res.se <= delta <= res.ci95[1] + res.se


class TestParallelTrends:
    def test_flat_identical_pretrends(self):
        panel = simple_panel(10, 8, 10, 10, n_per_arm=3, periods=(-3, -2, -1, 0, 1))
        res = eff.parallel_trends_check(panel)
        assert res.stat == 0.0 and res.p == 1.0

    def test_diverging_pretrends_detected(self):
        rng = np.random.default_rng(8)
        periods = (-4, -3, -2, -1, 0, 1)
        units, out, zone, adoption = [], [], {}, {}
        for i in range(50):
            u = f"T{i}"
            units.append(u)
            out.append([10 + 1.0 * p + 0.1 * rng.standard_normal() for p in periods])
            zone[u], adoption[u] = 1, 10
        for i in range(50):
            u = f"C{i}"
            units.append(u)
            out.append([10 + 0.1 * rng.standard_normal() for _ in periods])
            zone[u] = 1
        panel = eff.Panel(units=tuple(units), periods=periods,
                          outcome=np.array(out), treated=frozenset(adoption),
                          adoption_period=adoption, zone=zone)
        res = eff.parallel_trends_check(panel)
        assert res.p < 1e-6

    def test_too_few_pre_periods(self):
        panel = simple_panel(10, 8, 10, 10)
        with pytest.raises(eff.EffectsError, match="untestable"):
            eff.parallel_trends_check(panel)

    def test_placebo_near_zero_on_simulator(self):
        hits = 0
        for seed in range(3):
            spec = scm.default_spec(seed=seed)
            exp = scm.simulate_adherence_experiment(spec, 400, trigger_count=40.0)
            panel = eff.build_panel(exp.triggered_dataset(), exp.adoption, window=(6, 2),
                                    alignment=exp.triggers)
            res = eff.parallel_trends_check(panel)
            assert res.placebo_att is not None and res.placebo_se is not None
            hits += abs(res.placebo_att) < 3 * res.placebo_se
        assert hits >= 2
