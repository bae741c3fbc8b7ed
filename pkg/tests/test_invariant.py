import numpy as np
import pandas as pd
import pytest

from ipmcausal import datamodel as dm
from ipmcausal import invariant as inv
from ipmcausal import scm

from _toys import flipped_holdout_table, flipped_spurious_table

PARENT_COLS = ("SG", "Pr", "SW", "P", "LC", "PGS", "M", "Sp",
               "V_bt", "CS_rot", "AC_cotton", "AC_other")


class TestInvarianceTest:
    def test_identical_residuals_give_cap(self):
        resid = np.random.default_rng(0).standard_normal(50)
        assert inv.invariance_test({1: resid, 2: resid.copy()}) == 1.0

    def test_strong_mean_shift_detected(self):
        rng = np.random.default_rng(1)
        p = inv.invariance_test({
            "a": rng.standard_normal(100),
            "b": rng.standard_normal(100) + 10.0,
        })
        assert p < 1e-6

    def test_variance_shift_detected(self):
        rng = np.random.default_rng(2)
        p = inv.invariance_test({
            "a": rng.standard_normal(400),
            "b": 3.0 * rng.standard_normal(400),
        })
        assert p < 1e-6

    def test_label_permutation_symmetric(self):
        rng = np.random.default_rng(3)
        groups = {f"e{i}": rng.standard_normal(40) for i in range(3)}
        p1 = inv.invariance_test(groups)
        p2 = inv.invariance_test(dict(reversed(list(groups.items()))))
        assert p1 == p2

    def test_in_unit_interval(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            p = inv.invariance_test({1: rng.standard_normal(30), 2: rng.standard_normal(30)})
            assert 0.0 <= p <= 1.0

    def test_single_environment_rejected(self):
        with pytest.raises(inv.InvariantError, match="untestable"):
            inv.invariance_test({1: np.zeros(20)})

    def test_small_environment_rejected(self):
        with pytest.raises(inv.InvariantError, match="untestable"):
            inv.invariance_test({1: np.zeros(20), 2: np.zeros(3)})


class TestFitIcp:
    def test_single_environment_untestable(self):
        frame = flipped_spurious_table(0, n=100, rhos=(1.0,), scales=(1.0,))
        res = inv.fit_icp(frame, ["x1", "x2"], "y", env_col="env")
        assert res.intersection == ()
        assert not res.model_class_rejected
        assert res.diagnostic == "untestable"

    def test_toy_recovers_causal_feature(self):
        frame = flipped_spurious_table(7)
        res = inv.fit_icp(frame, ["x1", "x2"], "y", env_col="env")
        assert res.intersection == ("x1",)

    def test_candidate_budget_enforced(self):
        frame = flipped_spurious_table(0, n=64)
        with pytest.raises(inv.InvariantError, match="budget"):
            inv.fit_icp(frame, [f"c{i}" for i in range(21)], "y", env_col="env")

    def test_simulator_coverage(self):
        # linear-regime ecosystem: the intersection stays within the true
        # parents of the population node across seeds
        cands = ["T", "SW", "RHa", "Pr", "W", "SOI", "S", "LC", "P", "SG", "M", "Sp"]
        parents = set(PARENT_COLS)
        hits = 0
        n_seeds = 6
        for seed in range(n_seeds):
            spec = scm.linear_regime_spec(seed=seed)
            table = dm.make_supervised(scm.simulate(spec, 320, 26, 4))
            res = inv.fit_icp(table.frame, cands, "y_next_log",
                              max_subset_size=8, base_cols=("Y_log",))
            hits += set(res.intersection) <= parents
        assert hits == n_seeds

    def test_full_parent_set_accepted(self):
        spec = scm.linear_regime_spec(seed=3)
        table = dm.make_supervised(scm.simulate(spec, 320, 26, 4))
        res = inv.fit_icp(table.frame, list(PARENT_COLS), "y_next_log",
                          max_subset_size=len(PARENT_COLS), base_cols=("Y_log",))
        accepted = {s for s, _ in res.accepted_sets}
        assert tuple(sorted(PARENT_COLS)) in accepted

    def test_greedy_extension_flagged(self):
        frame = flipped_spurious_table(0, n=256)
        frame["x3"] = np.random.default_rng(5).standard_normal(len(frame))
        res = inv.fit_icp(frame, ["x1", "x2", "x3"], "y", env_col="env", max_subset_size=2)
        assert res.approximate

    def test_result_serializes(self):
        frame = flipped_spurious_table(1, n=512)
        res = inv.fit_icp(frame, ["x1", "x2"], "y", env_col="env")
        import json
        doc = json.loads(res.to_json())
        assert doc["intersection"] == list(res.intersection)


class TestFitIrm:
    def test_zero_penalty_matches_pooled_ols(self):
        frame = flipped_spurious_table(42, n=500)
        ols = inv.fit_pooled_ols(frame, ["x1", "x2"], "y")
        irm = inv.fit_irm(frame, ["x1", "x2"], "y", env_col="env",
                          epochs=4000, lr=5e-2, penalty_schedule=[0.0] * 4000)
        for c in ("x1", "x2"):
            assert abs(irm.weights[c] - ols.weights[c]) < 1e-6
        assert abs(irm.intercept - ols.intercept) < 1e-6

    def test_spurious_weight_suppressed(self):
        frame = flipped_spurious_table(0, n=20_000)
        erm = inv.fit_pooled_ols(frame, ["x1", "x2"], "y")
        irm = inv.fit_irm(frame, ["x1", "x2"], "y", env_col="env", epochs=2000, lr=2e-2)
        assert abs(irm.weights["x2"]) < 0.1 * abs(erm.weights["x2"])

    def test_penalty_small_on_invariant_features(self):
        spec = scm.linear_regime_spec(seed=5)
        table = dm.make_supervised(scm.simulate(spec, 160, 26, 4))
        feats = ["Y_log", "Pr", "SW", "LC", "P", "Sp"]
        model = inv.fit_irm(table.frame, feats, "y_next_log", epochs=2500, lr=1e-2)
        penalty = inv.irm_penalty_value(model, table.frame, feats, "y_next_log")
        assert penalty < 1e-4

    def test_diagnostics_lengths(self):
        frame = flipped_spurious_table(3, n=256)
        irm = inv.fit_irm(frame, ["x1", "x2"], "y", env_col="env", epochs=50, lr=1e-2)
        assert len(irm.penalty_per_epoch) == 50
        assert all(len(v) == 50 for v in irm.risk_per_env.values())

    def test_schedule_length_validated(self):
        frame = flipped_spurious_table(3, n=256)
        with pytest.raises(inv.InvariantError, match="schedule"):
            inv.fit_irm(frame, ["x1"], "y", env_col="env", epochs=10,
                        penalty_schedule=[0.0] * 5)

    def test_divergence_reported(self):
        frame = flipped_spurious_table(3, n=256)
        with pytest.raises(inv.InvariantError, match="diverged at epoch"):
            inv.fit_irm(frame, ["x1", "x2"], "y", env_col="env", epochs=200, lr=50.0,
                        penalty_schedule=[0.0] * 200)

    def test_single_environment_rejected(self):
        frame = flipped_spurious_table(0, n=128, rhos=(1.0,), scales=(1.0,))
        with pytest.raises(inv.InvariantError, match="environments"):
            inv.fit_irm(frame, ["x1"], "y", env_col="env", epochs=10)


class TestPredict:
    def test_zero_weights_constant(self):
        model = inv.LinearModel(weights={"a": 0.0}, intercept=3.5)
        assert inv.predict(model, {"a": 100.0}) == 3.5

    def test_affine_arithmetic(self):
        model = inv.LinearModel(weights={"a": 2.0}, intercept=1.0)
        assert inv.predict(model, {"a": 3.0}) == 7.0

    def test_matches_manual_dot_product(self):
        rng = np.random.default_rng(8)
        names = [f"f{i}" for i in range(6)]
        model = inv.LinearModel(weights={n: float(w) for n, w in zip(names, rng.standard_normal(6))},
                                intercept=float(rng.standard_normal()))
        for _ in range(10):
            x = {n: float(v) for n, v in zip(names, rng.standard_normal(6))}
            manual = model.intercept + sum(model.weights[n] * x[n] for n in names)
            assert inv.predict(model, x) == pytest.approx(manual, abs=1e-12)

    def test_missing_feature_rejected(self):
        model = inv.LinearModel(weights={"a": 2.0}, intercept=1.0)
        with pytest.raises(inv.InvariantError, match="missing"):
            inv.predict(model, {"b": 3.0})

    def test_rescaling_feature_rescales_weight(self):
        frame = flipped_spurious_table(11, n=4000)
        m1 = inv.fit_irm(frame, ["x1", "x2"], "y", env_col="env", epochs=400, lr=2e-2,
                         penalty_schedule=[0.0] * 400)
        scaled = frame.copy()
        scaled["x1"] = scaled["x1"] * 10.0
        m2 = inv.fit_irm(scaled, ["x1", "x2"], "y", env_col="env", epochs=400, lr=2e-2,
                         penalty_schedule=[0.0] * 400)
        assert m2.weights["x1"] == pytest.approx(m1.weights["x1"] / 10.0, rel=1e-6)
        x = {"x1": 0.7, "x2": -0.2}
        x_scaled = {"x1": 7.0, "x2": -0.2}
        assert inv.predict(m2, x_scaled) == pytest.approx(inv.predict(m1, x), abs=1e-8)


class TestOodEvaluate:
    def test_perfect_model_zero_mse(self):
        frame = pd.DataFrame({"x1": [1.0, 2.0, 3.0, 4.0] * 4, "env": [1, 1, 2, 2] * 4})
        frame["y"] = 2.0 * frame["x1"] + 1.0
        model = inv.LinearModel(weights={"x1": 2.0}, intercept=1.0)
        rep = inv.ood_evaluate({"m": model}, frame, "y", env_col="env")
        assert rep.worst["m"] == pytest.approx(0.0, abs=1e-24)

    def test_worst_is_max_of_envs(self):
        frame = flipped_spurious_table(2, n=512)
        model = inv.fit_pooled_ols(frame, ["x1"], "y")
        rep = inv.ood_evaluate({"m": model}, frame, "y", env_col="env")
        assert rep.worst["m"] == max(rep.per_env["m"].values())

    def test_icp_restricted_beats_pooled_on_flipped_holdout(self):
        wins = 0
        n_seeds = 10
        for seed in range(n_seeds):
            train = flipped_spurious_table(seed)
            held = flipped_holdout_table(seed + 1000)
            res = inv.fit_icp(train, ["x1", "x2"], "y", env_col="env")
            icp_m = inv.fit_pooled_ols(train, list(res.intersection), "y")
            pool_m = inv.fit_pooled_ols(train, ["x1", "x2"], "y")
            both = pd.concat([train, held], ignore_index=True)
            rep = inv.ood_evaluate({"icp": icp_m, "pooled": pool_m}, both, "y", env_col="env")
            wins += rep.worst["icp"] < rep.worst["pooled"]
        assert wins >= 0.8 * n_seeds
